#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/tensor.hpp"

namespace xmodal {

inline constexpr std::size_t kNumTraits = 5;
inline constexpr std::size_t kNumModalities = 3;

/// Big-Five order used everywhere: extraversion, neuroticism, agreeableness,
/// conscientiousness, openness.
inline constexpr std::array<std::string_view, kNumTraits> kTraitNames = {"ext", "neu", "agr",
                                                                          "con", "ope"};

enum class Modality : std::size_t { audio = 0, video = 1, text = 2 };
inline constexpr std::array<std::string_view, kNumModalities> kModalityNames = {"audio", "video",
                                                                                "text"};
inline constexpr std::array<Modality, kNumModalities> kModalities = {Modality::audio, Modality::video,
                                                                     Modality::text};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);
std::size_t trait_index(std::string_view name);

/// Five trait scores, each in [0,1].
using TraitVector = std::array<double, kNumTraits>;

enum class TraitClass : std::uint8_t { C1 = 1, C2 = 2, C3 = 3, C4 = 4 };
using ClassLabels = std::array<TraitClass, kNumTraits>;

constexpr bool is_extreme(TraitClass c) { return c == TraitClass::C1 || c == TraitClass::C4; }
std::string to_string(TraitClass c);

/// Per-trait mean and standard deviation of the training split. Cut points are
/// mean - std, mean, mean + std.
struct ClassThresholds {
  TraitVector mean{};
  TraitVector stddev{};
  bool unbiased = false;

  double low_cut(std::size_t t) const { return mean[t] - stddev[t]; }
  double high_cut(std::size_t t) const { return mean[t] + stddev[t]; }

  /// Data-quality warnings for cut points that leave (0,1).
  std::vector<std::string> warnings() const;

  nlohmann::json to_json() const;
  static ClassThresholds from_json(const nlohmann::json& j);
  friend bool operator==(const ClassThresholds&, const ClassThresholds&) = default;
};

/// Population std by default; `unbiased` switches to the n-1 estimator.
ClassThresholds fit_thresholds(std::span<const TraitVector> train_traits, bool unbiased = false);

/// Half-open bins [0, m-s) [m-s, m) [m, m+s) [m+s, 1]. With s == 0 scores
/// below m are C2 and everything else C3.
TraitClass classify_score(double score, double mean, double stddev);
ClassLabels assign_classes(const TraitVector& traits, const ClassThresholds& thresholds);

struct Sample {
  std::string id;
  std::array<std::vector<double>, kNumModalities> features;
  TraitVector traits{};
  ClassLabels classes{};

  const std::vector<double>& feature(Modality m) const { return features[index_of(m)]; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Split {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// n x N_m feature matrix in sample order.
  nn::Tensor features(Modality m) const;
  /// n x 5 trait matrix.
  nn::Tensor traits() const;
  std::vector<TraitVector> trait_vectors() const;

  friend bool operator==(const Split&, const Split&) = default;
};

struct Dataset {
  Split train;
  Split val;
  Split test;
  std::array<std::size_t, kNumModalities> dims{};
  nlohmann::json meta = nlohmann::json::object();

  /// Fits thresholds on the training split and labels every split with them.
  ClassThresholds assign_labels(bool unbiased = false);
};

struct MinMaxStats {
  std::vector<double> min;
  std::vector<double> max;

  nlohmann::json to_json() const;
  static MinMaxStats from_json(const nlohmann::json& j);
  friend bool operator==(const MinMaxStats&, const MinMaxStats&) = default;
};

MinMaxStats fit_minmax(const nn::Tensor& matrix);
/// Rescales columns by `stats`; constant columns map to 0, out-of-range
/// values are clipped into [0,1].
nn::Tensor apply_minmax(const nn::Tensor& matrix, const MinMaxStats& stats);
/// Fits on `matrix` unless `fitted` is given, then applies.
std::pair<nn::Tensor, MinMaxStats> minmax_normalize(const nn::Tensor& matrix,
                                                    const MinMaxStats* fitted = nullptr);

struct SyntheticConfig {
  std::size_t n_samples = 2000;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::array<std::size_t, kNumModalities> dims{24, 32, 24};
  TraitVector trait_mean{0.5, 0.5, 0.5, 0.5, 0.5};
  TraitVector trait_std{0.15, 0.15, 0.15, 0.15, 0.15};
  /// Equicorrelation between the five latent trait draws.
  double trait_correlation = 0.0;
  std::array<double, kNumModalities> noise{0.7, 0.7, 0.7};
  std::array<double, kNumModalities> informativeness{0.6, 1.0, 0.4};
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticConfig from_json(const nlohmann::json& j);
};

/// Pure function of `config`. Traits ~ Normal(mean, std) clipped to [0,1];
/// each modality observes a fixed random projection of the standardized
/// traits scaled by its informativeness, plus Gaussian noise.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Writes train.jsonl, val.jsonl, test.jsonl and meta.json into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
/// Reads a dataset directory. Class labels are left unassigned (C1 placeholder);
/// call Dataset::assign_labels.
Dataset load_dataset(const std::filesystem::path& dir);

std::string sample_to_jsonl(const Sample& s);
Sample sample_from_json(const nlohmann::json& j, const std::array<std::size_t, kNumModalities>* dims);

}  // namespace xmodal
