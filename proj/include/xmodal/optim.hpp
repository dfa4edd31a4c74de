#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "xmodal/autodiff.hpp"

namespace xmodal::nn {

struct AdamConfig {
  double lr0 = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t total_steps = 1;
  double decay_power = 1.0;
  double end_lr = 0.0;

  /// Polynomial decay: (lr0 - end_lr) * (1 - step/total)^power + end_lr.
  double lr(std::size_t step) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const AdamConfig& c);

class Adam {
 public:
  explicit Adam(AdamConfig config);

  /// One bias-corrected Adam update at schedule position `step` (0-based).
  /// Weight decay is decoupled: W -= lr * wd * W alongside the Adam update.
  /// Frozen parameters and parameters without a gradient are left untouched.
  void step(std::span<const Var> params, const GradientMap& grads, std::size_t step);

  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
    std::size_t updates = 0;
  };

  AdamConfig config_;
  std::unordered_map<const Node*, Moments> moments_;
};

}  // namespace xmodal::nn
