#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/autodiff.hpp"
#include "xmodal/datamodel.hpp"

namespace xmodal {

/// Inverted-bell regression loss gamma * (1 - exp(-(s*r)^2 / (2 sigma^2))).
/// `score_scale` (s) maps [0,1] scores onto the range sigma was tuned for.
struct BellConfig {
  double sigma = 9.0;
  double gamma = 300.0;
  double score_scale = 1.0;

  void validate() const;
};

struct MSConfig {
  double alpha = 2.0;
  double beta = 50.0;
  double lambda = 1.0;
  double margin = 0.1;  // mining epsilon
  bool extreme_anchors_only = true;
  bool normalize_embeddings = true;
  /// Divide by 5 * rows instead of by the number of contributing terms.
  bool literal_normalization = false;
  /// Trait j compares only the j-th of five contiguous embedding blocks.
  /// Off: every trait compares whole embeddings.
  bool trait_subspaces = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const BellConfig& c);
void to_json(nlohmann::json& j, const MSConfig& c);

// Regression losses on y (targets) and y_hat (predictions), both n x 5.
// Each averages over every element, i.e. 1/(5n).
double mae_loss(const nn::Tensor& y, const nn::Tensor& y_hat);
double mse_loss(const nn::Tensor& y, const nn::Tensor& y_hat);
double bell_loss(const nn::Tensor& y, const nn::Tensor& y_hat, const BellConfig& config);
/// L = L_mae + L_mse + L_bell.
double composite_loss(const nn::Tensor& y, const nn::Tensor& y_hat, const BellConfig& config);

// Differentiable versions; gradients flow into `y_hat`. The MAE subgradient at
// a zero residual is 0.
nn::Var mae_loss(const nn::Tensor& y, const nn::Var& y_hat);
nn::Var mse_loss(const nn::Tensor& y, const nn::Var& y_hat);
nn::Var bell_loss(const nn::Tensor& y, const nn::Var& y_hat, const BellConfig& config);
nn::Var composite_loss(const nn::Tensor& y, const nn::Var& y_hat, const BellConfig& config);

/// Gram matrix of (optionally L2-normalized) embedding rows.
nn::Tensor similarity_matrix(const nn::Tensor& embeddings, bool normalize);

/// Column range [first, second) of trait t's block when `dim` columns are cut
/// into five contiguous near-equal blocks.
std::pair<std::size_t, std::size_t> trait_block(std::size_t dim, std::size_t trait);

/// Similarity matrices seen by the loss: five per-trait block matrices with
/// `trait_subspaces`, otherwise one matrix shared by every trait.
std::vector<nn::Tensor> trait_similarities(const nn::Tensor& embeddings, const MSConfig& config);

/// Mined positives and negatives of one (anchor row, trait) term.
struct PairTerm {
  std::size_t anchor = 0;
  std::size_t trait = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

struct PairSets {
  std::size_t rows = 0;
  std::vector<PairTerm> terms;
  /// Rows that qualified as anchors, summed over traits (before mining).
  std::size_t anchor_candidates = 0;
};

/// Trait-wise pair construction with multi-similarity hard-pair mining over a
/// batch whose row labels are `labels`. Terms whose mined positive or negative
/// set comes out empty are dropped.
PairSets build_pairs(std::span<const ClassLabels> labels, const nn::Tensor& similarity,
                     const MSConfig& config);
/// `similarity` holds one matrix shared by all traits or one per trait.
PairSets build_pairs(std::span<const ClassLabels> labels, std::span<const nn::Tensor> similarity,
                     const MSConfig& config);

/// Loss value over given pair sets and similarity matrix.
double ms_loss_value(const nn::Tensor& similarity, const PairSets& pairs, const MSConfig& config);
double ms_loss_value(std::span<const nn::Tensor> similarity, const PairSets& pairs, const MSConfig& config);

struct MSLoss {
  nn::Var value;
  std::size_t terms = 0;
  std::size_t anchor_candidates = 0;
};

/// Trait-wise multi-similarity loss over a batch of embeddings (rows) with
/// per-row labels. Mining is treated as a constant selection when
/// differentiating.
MSLoss ms_loss(const nn::Var& embeddings, std::span<const ClassLabels> labels, const MSConfig& config);

}  // namespace xmodal
