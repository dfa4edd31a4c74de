#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/datamodel.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct TrainConfig;

/// 1 - mean absolute error over every element.
double r_acc(const nn::Tensor& y, const nn::Tensor& y_hat);
/// 1 - MAE of each trait column.
TraitVector r_acc_per_trait(const nn::Tensor& y, const nn::Tensor& y_hat);

struct SubsetScore {
  double r_acc = 0.0;  // NaN when count == 0
  std::size_t count = 0;
};

struct TraitScores {
  SubsetScore all;
  SubsetScore low;   // C1 on this trait
  SubsetScore high;  // C4 on this trait
};

struct EvalReport {
  std::string model;
  std::array<TraitScores, kNumTraits> traits{};
  /// Means of the per-trait values; counts are summed.
  TraitScores average;

  nlohmann::json to_json() const;
};

/// All / Low / High R_acc per trait column. `y_hat` should already be clipped.
EvalReport extreme_subset_eval(const nn::Tensor& y, const nn::Tensor& y_hat,
                               std::span<const ClassLabels> labels, const std::string& model_id);
EvalReport extreme_subset_eval(const Split& test, const ClassThresholds& thresholds,
                               const nn::Tensor& y_hat, const std::string& model_id);

struct AblationRow {
  std::string name;
  TraitVector r_acc{};
  double average = 0.0;
};

/// Row order of the modality ablation: A, V, T, A+V, A+T, T+V, A+V+T, Ours.
inline constexpr std::array<std::string_view, 8> kAblationRows = {
    "A", "V", "T", "A+V", "A+T", "T+V", "A+V+T", "Ours"};

/// Trains every modality combination plus the full model on the same splits
/// and seed; scores clipped test predictions.
std::vector<AblationRow> ablation_table(const Dataset& data, const ModelConfig& model_config,
                                        const TrainConfig& config);
std::string ablation_csv(std::span<const AblationRow> rows);

struct PCAModel {
  std::vector<double> mean;
  nn::Tensor axes;  // 2 x d, orthonormal rows
  std::array<double, 2> variance{};
};

struct SymmetricEigen {
  std::vector<double> values;  // descending
  nn::Tensor vectors;          // column k pairs with values[k]
};

/// Cyclic Jacobi rotations on a symmetric matrix.
SymmetricEigen symmetric_eigen(const nn::Tensor& symmetric);

/// Top-2 eigenvectors of the sample covariance; each axis is oriented so its
/// largest-magnitude coefficient is positive.
PCAModel pca_fit(const nn::Tensor& points);
nn::Tensor pca_project(const PCAModel& model, const nn::Tensor& points);

/// Mean silhouette coefficient of a labelled point set (Euclidean).
double silhouette_score(const nn::Tensor& points, std::span<const int> labels);

struct EmbeddingTag {
  Modality modality = Modality::audio;
  TraitClass cls = TraitClass::C1;
};

/// At most `per_cell` indices per (modality, class) cell, drawn uniformly
/// without replacement; result sorted by cell then index.
std::vector<std::size_t> balanced_subsample(std::span<const EmbeddingTag> tags, std::size_t per_cell,
                                            std::uint64_t seed);

struct EmbeddingPoint {
  double x = 0.0;
  double y = 0.0;
  Modality modality = Modality::audio;
  TraitClass cls = TraitClass::C1;
  std::string trait;
  double value = 0.0;
};

enum class EmbeddingSpace { embedding, hidden };
EmbeddingSpace embedding_space_from_string(std::string_view name);

/// Per-modality vectors of `split` in the chosen space. Embeddings are
/// L2-normalized as the metric loss sees them: per trait block (then scaled
/// by 1/sqrt(5) so rows have unit length) when `ms.trait_subspaces` is set.
std::array<nn::Tensor, kNumModalities> modality_vectors(const Model& model, const Split& split,
                                                        EmbeddingSpace space, const MSConfig& ms = {});

/// Balanced subsample of the split's vectors, classed on `trait`, projected
/// onto the top-2 principal axes fitted on the subsample.
std::vector<EmbeddingPoint> embedding_points(const Model& model, const Split& split,
                                             std::string_view trait, std::size_t per_cell,
                                             EmbeddingSpace space, std::uint64_t seed,
                                             const MSConfig& ms = {});

inline constexpr std::string_view kPcaCsvHeader = "x,y,modality,class,trait,value";
std::string pca_points_csv(std::span<const EmbeddingPoint> points);

}  // namespace xmodal
