#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/autodiff.hpp"

namespace xmodal::nn {

enum class Activation { relu, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Kaiming/He normal weights, std = sqrt(2 / in_dim), shape in_dim x out_dim.
Tensor he_init(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

enum class Mode { train, eval };

/// Per-forward context: dropout is active only in train mode and draws from `rng`.
struct ForwardContext {
  Mode mode = Mode::eval;
  std::mt19937_64* rng = nullptr;

  bool training() const { return mode == Mode::train; }
};

class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act, double weight_decay,
             std::uint64_t seed, const std::string& name);

  /// act(x W + b) for x of shape batch x in_dim.
  Var forward(const Var& x) const;

  std::size_t in_dim() const { return weights_->value.rows(); }
  std::size_t out_dim() const { return weights_->value.cols(); }
  Activation activation() const { return act_; }
  double weight_decay() const { return weights_->weight_decay; }

  const Var& weights() const { return weights_; }
  const Var& bias() const { return bias_; }

  nlohmann::json to_json() const;
  static DenseLayer from_json(const nlohmann::json& j, const std::string& name);

 private:
  Var weights_;
  Var bias_;
  Activation act_ = Activation::linear;
};

/// Layer shape for building an Mlp: width, activation and dropout applied after it.
struct LayerSpec {
  std::size_t width = 0;
  Activation act = Activation::relu;
  double dropout_after = 0.0;
};

/// Stack of dense layers with optional input dropout and per-layer dropout.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, std::size_t in_dim, const std::vector<LayerSpec>& layers,
      double weight_decay, std::uint64_t seed, double input_dropout = 0.0);

  Var forward(const Var& x, const ForwardContext& ctx) const;
  /// Eval-mode forward on plain values.
  Tensor infer(const Tensor& x) const;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  const std::string& name() const { return name_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

  std::vector<Var> parameters() const;
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::string name_;
  std::vector<DenseLayer> layers_;
  std::vector<double> dropout_after_;
  double input_dropout_ = 0.0;
  bool frozen_ = false;
};

}  // namespace xmodal::nn
