#pragma once

// Network graph: per-modality encoders f_A/f_V/f_T, linear trait heads,
// fusion nets M1 and M2, and the shared Siamese projector S.
//
//   features --f_m--> h_m (Q)
//   h_A ++ h_V ++ h_T (3Q) --M1--> fused (O) --head--> y_hat        (baseline)
//   h_m --S--> e_m (E)
//   fused ++ e_A ++ e_V ++ e_T (O+3E) --M2--> (O) --head--> y_hat   (full)

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/datamodel.hpp"
#include "xmodal/layers.hpp"

namespace xmodal {

struct ModelConfig {
  std::array<std::size_t, kNumModalities> input_dims{24, 32, 24};
  std::size_t hidden = 32;     // Q
  std::size_t fused = 64;      // O
  std::size_t embedding = 16;  // E
  std::vector<std::size_t> siamese_hidden{25, 25};
  /// Dropout on each encoder's input features.
  std::array<double, kNumModalities> encoder_dropout{0.0, 0.0, 0.0};
  /// Dropout after the first Siamese hidden layer.
  double siamese_dropout = 0.5;
  double weight_decay = 5e-4;

  static ModelConfig desk(const std::array<std::size_t, kNumModalities>& dims);
  static ModelConfig paper(const std::array<std::size_t, kNumModalities>& dims);

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Subnet : std::size_t {
  enc_audio,
  enc_video,
  enc_text,
  head_audio,
  head_video,
  head_text,
  m1,
  head_fused,
  siamese,
  m2,
  head_final,
};
inline constexpr std::size_t kNumSubnets = 11;
std::string_view to_string(Subnet s);

constexpr Subnet encoder_of(Modality m) { return static_cast<Subnet>(index_of(m)); }
constexpr Subnet head_of(Modality m) { return static_cast<Subnet>(3 + index_of(m)); }

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  nn::Mlp& net(Subnet s) { return nets_[static_cast<std::size_t>(s)]; }
  const nn::Mlp& net(Subnet s) const { return nets_[static_cast<std::size_t>(s)]; }

  int stage() const { return stage_; }
  void set_stage(int stage);
  void freeze(Subnet s) { net(s).set_frozen(true); }
  bool frozen(Subnet s) const { return net(s).frozen(); }

  // Graph-building forward ops.
  nn::Var encode(Modality m, const nn::Var& features, const nn::ForwardContext& ctx) const;
  /// Linear head `head` applied to h.
  nn::Var predict_head(Subnet head, const nn::Var& h) const;
  nn::Var fuse_baseline(const nn::Var& h_audio, const nn::Var& h_video, const nn::Var& h_text,
                        const nn::ForwardContext& ctx) const;
  nn::Var embed(const nn::Var& h, const nn::ForwardContext& ctx) const;
  nn::Var fuse_full(const nn::Var& h_audio, const nn::Var& h_video, const nn::Var& h_text,
                    const nn::Var& e_audio, const nn::Var& e_video, const nn::Var& e_text,
                    const nn::ForwardContext& ctx) const;

  // Preprocessing fitted on the training split.
  std::array<MinMaxStats, kNumModalities> feature_stats;
  ClassThresholds thresholds;

  // Eval-mode inference on raw split features.
  nn::Tensor normalized_features(Modality m, const Split& split) const;
  nn::Tensor hidden(Modality m, const Split& split) const;
  nn::Tensor embeddings(Modality m, const Split& split) const;
  nn::Tensor predict_monomodal(Modality m, const Split& split) const;
  nn::Tensor predict_baseline(const Split& split) const;
  nn::Tensor predict_full(const Split& split) const;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);

  /// Everything trainable on any subnetwork, including frozen ones.
  std::vector<nn::Var> all_parameters() const;

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  int stage_ = 0;
  std::array<nn::Mlp, kNumSubnets> nets_;
};

/// Component-wise clamp to [0,1]; report-time only.
nn::Tensor clip_prediction(const nn::Tensor& raw);

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());
Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace xmodal
