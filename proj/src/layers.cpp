#include "xmodal/layers.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal::nn {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

Tensor he_init(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("he_init requires positive dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in_dim)));
  Tensor w(in_dim, out_dim);
  for (double& v : w.values()) v = normal(rng);
  return w;
}

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act,
                       double weight_decay, std::uint64_t seed, const std::string& name)
    : weights_(parameter(he_init(in_dim, out_dim, seed), name + ".W", weight_decay)),
      bias_(parameter(Tensor(1, out_dim), name + ".b", 0.0)),
      act_(act) {}

Var DenseLayer::forward(const Var& x) const {
  if (x->value.cols() != in_dim()) {
    throw DimensionError(weights_->name + ": input has " + std::to_string(x->value.cols()) +
                         " features, layer expects " + std::to_string(in_dim()));
  }
  Var y = add_row(matmul(x, weights_), bias_);
  return act_ == Activation::relu ? relu(y) : y;
}

nlohmann::json DenseLayer::to_json() const {
  return {{"in", in_dim()},
          {"out", out_dim()},
          {"activation", to_string(act_)},
          {"weight_decay", weights_->weight_decay},
          {"weights", weights_->value.values()},
          {"bias", bias_->value.values()}};
}

DenseLayer DenseLayer::from_json(const nlohmann::json& j, const std::string& name) {
  DenseLayer layer;
  const auto in = j.at("in").get<std::size_t>();
  const auto out = j.at("out").get<std::size_t>();
  layer.act_ = activation_from_string(j.at("activation").get<std::string>());
  layer.weights_ = parameter(Tensor(in, out, j.at("weights").get<std::vector<double>>()),
                             name + ".W", j.at("weight_decay").get<double>());
  layer.bias_ = parameter(Tensor(1, out, j.at("bias").get<std::vector<double>>()), name + ".b");
  return layer;
}

Mlp::Mlp(std::string name, std::size_t in_dim, const std::vector<LayerSpec>& layers,
         double weight_decay, std::uint64_t seed, double input_dropout)
    : name_(std::move(name)), input_dropout_(input_dropout) {
  if (layers.empty()) throw ConfigError(name_ + ": network needs at least one layer");
  std::size_t width = in_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& spec = layers[i];
    if (width == 0 || spec.width == 0) throw ConfigError(name_ + ": layer widths must be positive");
    const std::string lname = name_ + "." + std::to_string(i);
    layers_.emplace_back(width, spec.width, spec.act, weight_decay, derive_seed(seed, lname), lname);
    dropout_after_.push_back(spec.dropout_after);
    width = spec.width;
  }
}

Var Mlp::forward(const Var& x, const ForwardContext& ctx) const {
  if (ctx.training() && ctx.rng == nullptr &&
      (input_dropout_ > 0.0 ||
       std::any_of(dropout_after_.begin(), dropout_after_.end(), [](double r) { return r > 0; }))) {
    throw UsageError(name_ + ": train-mode forward with dropout needs an rng");
  }
  Var h = x;
  if (input_dropout_ > 0.0 && ctx.training()) h = dropout(h, input_dropout_, *ctx.rng, true);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (dropout_after_[i] > 0.0 && ctx.training()) h = dropout(h, dropout_after_[i], *ctx.rng, true);
  }
  return h;
}

Tensor Mlp::infer(const Tensor& x) const { return forward(constant(x), {})->value; }

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::vector<Var> Mlp::parameters() const {
  std::vector<Var> out;
  for (const auto& l : layers_) {
    out.push_back(l.weights());
    out.push_back(l.bias());
  }
  return out;
}

void Mlp::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (const auto& p : parameters()) nn::set_frozen(p, frozen);
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l.to_json());
  return {{"name", name_},
          {"frozen", frozen_},
          {"input_dropout", input_dropout_},
          {"dropout_after", dropout_after_},
          {"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp m;
  m.name_ = j.at("name").get<std::string>();
  m.input_dropout_ = j.at("input_dropout").get<double>();
  m.dropout_after_ = j.at("dropout_after").get<std::vector<double>>();
  const auto& layers = j.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    m.layers_.push_back(DenseLayer::from_json(layers[i], m.name_ + "." + std::to_string(i)));
  }
  if (m.dropout_after_.size() != m.layers_.size()) {
    throw DataError(m.name_ + ": dropout list does not match layer count");
  }
  for (std::size_t i = 1; i < m.layers_.size(); ++i) {
    if (m.layers_[i].in_dim() != m.layers_[i - 1].out_dim()) {
      throw DataError(m.name_ + ": layer " + std::to_string(i) + " input width mismatch");
    }
  }
  m.set_frozen(j.at("frozen").get<bool>());
  return m;
}

}  // namespace xmodal::nn
