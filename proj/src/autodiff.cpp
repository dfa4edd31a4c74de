#include "xmodal/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

#include "xmodal/error.hpp"

namespace xmodal::nn {

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value, std::string name, double weight_decay) {
  if (weight_decay < 0.0) throw ConfigError("negative weight decay for " + name);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_parameter = true;
  n->weight_decay = weight_decay;
  n->name = std::move(name);
  return n;
}

void set_frozen(const Var& param, bool frozen) {
  if (!param->is_parameter) throw UsageError("set_frozen on a non-parameter node");
  param->frozen = frozen;
  param->requires_grad = !frozen;
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op_name) {
  value.require_finite(op_name);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return n;
}

namespace {

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value)) {
    throw DimensionError(std::string(op) + " shape mismatch " + shape_string(a->value) + " vs " +
                         shape_string(b->value));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = nn::matmul(a->value, b->value);
  return make_op(
      std::move(out), {a, b},
      [a, b](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0]) accumulate(pg[0], matmul_nt(g, b->value));
        if (pg[1]) accumulate(pg[1], matmul_tn(a->value, g));
      },
      "matmul");
}

Var add_row(const Var& x, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& bv = bias->value;
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_row bias " + shape_string(bv) + " for input " + shape_string(xv));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  return make_op(
      std::move(out), {x, bias},
      [](const Tensor& g, std::span<Tensor*> pg) {
        accumulate(pg[0], g);
        if (pg[1]) {
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) (*pg[1])(0, c) += g(r, c);
        }
      },
      "add_row");
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_op(
      std::move(out), {a, b},
      [](const Tensor& g, std::span<Tensor*> pg) {
        accumulate(pg[0], g);
        accumulate(pg[1], g);
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_op(
      std::move(out), {a, b},
      [](const Tensor& g, std::span<Tensor*> pg) {
        accumulate(pg[0], g);
        if (pg[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
      },
      "sub");
}

Var scale(const Var& x, double s) {
  Tensor out = x->value;
  for (double& v : out.values()) v *= s;
  return make_op(
      std::move(out), {x},
      [s](const Tensor& g, std::span<Tensor*> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += s * g[i];
      },
      "scale");
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(
      std::move(out), {x},
      [x](const Tensor& g, std::span<Tensor*> pg) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x->value[i] > 0.0) (*pg[0])[i] += g[i];
      },
      "relu");
}

Var square(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v *= v;
  return make_op(
      std::move(out), {x},
      [x](const Tensor& g, std::span<Tensor*> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += 2.0 * x->value[i] * g[i];
      },
      "square");
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x->value.values()) s += v;
  return make_op(
      Tensor::scalar(s), {x},
      [](const Tensor& g, std::span<Tensor*> pg) {
        const double gv = g[0];
        for (double& v : pg[0]->values()) v += gv;
      },
      "sum");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols with no inputs");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p->value);
  Tensor out = hstack(values);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p->value.cols());
  return make_op(
      std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [widths](const Tensor& g, std::span<Tensor*> pg) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (pg[k]) {
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) (*pg[k])(r, c) += g(r, offset + c);
          }
          offset += widths[k];
        }
      },
      "concat_cols");
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x->value.rows(), x->value.cols());
  for (double& m : mask.values()) m = keep(rng) ? keep_scale : 0.0;
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op(
      std::move(out), {x},
      [mask = std::move(mask)](const Tensor& g, std::span<Tensor*> pg) {
        for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += mask[i] * g[i];
      },
      "dropout");
}

const Tensor* GradientMap::find(const Var& param) const {
  auto it = grads_.find(param.get());
  return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& GradientMap::at(const Var& param) const {
  const Tensor* g = find(param);
  if (g == nullptr) throw UsageError("no gradient recorded for parameter " + param->name);
  return *g;
}

GradientMap backward(const Var& loss) {
  if (loss->value.rows() != 1 || loss->value.cols() != 1) {
    throw UsageError("backward() requires a scalar loss, got " + shape_string(loss->value));
  }
  GradientMap result;
  if (!loss->requires_grad) return result;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Tensor> grads;
  grads.reserve(order.size());
  for (Node* n : order) grads.emplace(n, Tensor(n->value.rows(), n->value.cols()));
  grads.at(loss.get())[0] = 1.0;

  std::vector<Tensor*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    parent_grads.clear();
    for (const auto& p : n->parents) {
      parent_grads.push_back(p->requires_grad ? &grads.at(p.get()) : nullptr);
    }
    n->backward(grads.at(n), parent_grads);
  }

  for (Node* n : order) {
    if (!n->is_parameter) continue;
    Tensor g = std::move(grads.at(n));
    g.require_finite("gradient of " + n->name);
    result.set(n, std::move(g));
  }
  return result;
}

}  // namespace xmodal::nn
