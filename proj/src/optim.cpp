#include "xmodal/optim.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/error.hpp"

namespace xmodal::nn {

double AdamConfig::lr(std::size_t step) const {
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return (lr0 - end_lr) * std::pow(1.0 - frac, decay_power) + end_lr;
}

void AdamConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("adam: lr0 must be positive");
  if (end_lr < 0.0 || end_lr > lr0) throw ConfigError("adam: end_lr must lie in [0, lr0]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
  if (total_steps == 0) throw ConfigError("adam: total_steps must be positive");
  if (!(decay_power >= 0.0)) throw ConfigError("adam: decay_power must be non-negative");
}

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = {{"lr0", c.lr0},         {"beta1", c.beta1},
       {"beta2", c.beta2},     {"epsilon", c.epsilon},
       {"total_steps", c.total_steps}, {"decay_power", c.decay_power},
       {"end_lr", c.end_lr}};
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(std::span<const Var> params, const GradientMap& grads, std::size_t step) {
  if (step >= config_.total_steps) {
    throw UsageError("adam step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(config_.total_steps));
  }
  const double lr = config_.lr(step);
  for (const Var& p : params) {
    if (p->frozen) continue;
    const Tensor* g = grads.find(p);
    if (g == nullptr) continue;
    if (!g->same_shape(p->value)) throw DimensionError("adam: gradient shape mismatch for " + p->name);

    auto [it, inserted] = moments_.try_emplace(p.get());
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Tensor(p->value.rows(), p->value.cols());
      mo.v = Tensor(p->value.rows(), p->value.cols());
    }
    ++mo.updates;
    const double t = static_cast<double>(mo.updates);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double gi = (*g)[i];
      mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * gi;
      mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      p->value[i] -= lr * (mhat / (std::sqrt(vhat) + config_.epsilon) + p->weight_decay * p->value[i]);
    }
    p->value.require_finite("parameter " + p->name + " after adam step");
  }
}

}  // namespace xmodal::nn
