#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/datamodel.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/optim.hpp"

namespace xmodal {

/// Schedule for one learning stage. `adam.total_steps` is filled in at run time
/// from epochs x batches per epoch.
struct StagePlan {
  int stage = 1;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t patience = 8;
  nn::AdamConfig adam{};
  /// Stage 3: every batch carries at least one extreme sample per trait.
  bool stratified = false;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainConfig {
  /// Stage 1 runs one plan per modality encoder.
  std::array<StagePlan, kNumModalities> stage1;
  StagePlan stage2;
  StagePlan stage3;
  StagePlan stage4;
  BellConfig bell{9.0, 300.0, 100.0};
  MSConfig ms{};
  bool unbiased_std = false;
  std::uint64_t seed = 7;

  /// Desk-scale schedule: one batch size, 300-epoch fusion stages, a faster
  /// stage 3 and lambda 0.5 for the multi-similarity loss.
  static TrainConfig desk();
  /// Published per-modality batch sizes and epoch counts for stage 1
  /// (audio 128/100, video 22/80, text 50 epochs).
  static TrainConfig fidelity();

  const StagePlan& encoder_plan(Modality m) const { return stage1[index_of(m)]; }
  /// Plan of stage 2, 3 or 4.
  const StagePlan& plan(int stage) const;
  void validate() const;
  nlohmann::json to_json() const;
};

struct StageHistory {
  int stage = 0;
  std::string label;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  std::size_t skipped_batches = 0;
  /// Validation R_acc of the stage's predictor (stages 1, 2, 4).
  double val_r_acc = 0.0;

  nlohmann::json to_json() const;
};

/// True when the last `patience` entries brought no strict improvement over
/// the best value before them.
bool early_stop(std::span<const double> val_history, std::size_t patience);

/// Fresh model with min-max statistics and class thresholds fitted on the
/// training split only.
Model init_model(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config);

/// Encoders and their heads, each trained alone on the composite loss, then frozen.
std::vector<StageHistory> run_stage1(Model& model, const Dataset& data, const TrainConfig& config);
/// M1 and its head on concatenated hidden representations.
StageHistory run_stage2(Model& model, const Dataset& data, const TrainConfig& config);
/// Siamese projector on the trait-wise multi-similarity loss over triple-size batches.
StageHistory run_stage3(Model& model, const Dataset& data, const TrainConfig& config);
/// M2 and the final head on M1 features concatenated with the three embeddings.
StageHistory run_stage4(Model& model, const Dataset& data, const TrainConfig& config);

/// Trains body+head as one regressor on fixed inputs. Used by the stages and
/// by the modality ablation.
StageHistory fit_regressor(nn::Mlp& body, nn::Mlp& head, const nn::Tensor& train_x,
                           const nn::Tensor& train_y, const nn::Tensor& val_x,
                           const nn::Tensor& val_y, const StagePlan& plan, const BellConfig& bell,
                           std::uint64_t seed, const std::string& label);

/// Mini-batch index lists for one epoch. With `stratify`, each batch holds at
/// least one C1/C4 sample for every trait that has any.
std::vector<std::vector<std::size_t>> make_batches(std::span<const ClassLabels> labels,
                                                   std::size_t batch_size, bool stratify,
                                                   std::mt19937_64& rng);

/// Rows of the triple-size batch: all audio rows, then video, then text.
nn::Tensor stack_triple(const std::array<nn::Tensor, kNumModalities>& hidden,
                        std::span<const std::size_t> batch);
std::vector<ClassLabels> triple_labels(std::span<const ClassLabels> labels,
                                       std::span<const std::size_t> batch);

/// Labels of every sample in `split` under the model's fitted thresholds.
std::vector<ClassLabels> labels_for(const Model& model, const Split& split);

}  // namespace xmodal
