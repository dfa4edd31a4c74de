#pragma once

// Reverse-mode differentiation over Tensor-valued graph nodes.
//
// A forward pass builds a DAG of shared Node objects. Parameters are
// persistent leaves; every other node lives as long as the graph that
// references it. backward() walks the DAG once in reverse topological order.

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// Receives dLoss/dOutput and accumulates into each parent's gradient.
/// Entries of `parent_grads` are null for parents that do not require grad.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor*> parent_grads)>;

struct Node {
  Tensor value;
  bool requires_grad = false;

  // Parameter leaves only.
  bool is_parameter = false;
  bool frozen = false;
  double weight_decay = 0.0;
  std::string name;

  std::vector<Var> parents;
  BackwardFn backward;
};

Var constant(Tensor value);
/// Trainable leaf. `weight_decay` is applied by the optimizer, decoupled from
/// the loss gradient.
Var parameter(Tensor value, std::string name, double weight_decay = 0.0);
void set_frozen(const Var& param, bool frozen);

/// Generic op constructor. Fails with NumericError on a non-finite value.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op_name);

Var matmul(const Var& a, const Var& b);
/// x (n x d) + bias (1 x d) broadcast over rows.
Var add_row(const Var& x, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var relu(const Var& x);
Var square(const Var& x);
Var sum(const Var& x);
Var concat_cols(std::span<const Var> parts);
/// Inverted dropout. Identity when `training` is false or rate is 0.
Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training);

/// Parameter gradients produced by backward().
class GradientMap {
 public:
  const Tensor* find(const Var& param) const;
  const Tensor& at(const Var& param) const;
  bool contains(const Var& param) const { return find(param) != nullptr; }
  std::size_t size() const { return grads_.size(); }

  void set(const Node* node, Tensor g) { grads_[node] = std::move(g); }

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

/// Differentiates a scalar `loss` w.r.t. every unfrozen parameter it reaches.
GradientMap backward(const Var& loss);

}  // namespace xmodal::nn
