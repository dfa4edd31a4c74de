#include "xmodal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "xmodal/error.hpp"

namespace xmodal {

using nn::Tensor;
using nn::Var;

void BellConfig::validate() const {
  if (!(sigma > 0.0) || !(gamma > 0.0) || !(score_scale > 0.0)) {
    throw ConfigError("bell: sigma, gamma and score_scale must be positive");
  }
}

void MSConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("ms: alpha and beta must be positive");
  if (margin < 0.0) throw ConfigError("ms: margin must be non-negative");
}

void to_json(nlohmann::json& j, const BellConfig& c) {
  j = {{"sigma", c.sigma}, {"gamma", c.gamma}, {"score_scale", c.score_scale}};
}

void to_json(nlohmann::json& j, const MSConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"lambda", c.lambda},
       {"margin", c.margin},
       {"extreme_anchors_only", c.extreme_anchors_only},
       {"normalize_embeddings", c.normalize_embeddings},
       {"literal_normalization", c.literal_normalization},
       {"trait_subspaces", c.trait_subspaces}};
}

namespace {

void require_same_shape(const Tensor& y, const Tensor& y_hat, const char* what) {
  if (!y.same_shape(y_hat)) {
    throw DimensionError(std::string(what) + ": target " + shape_string(y) + " vs prediction " +
                         shape_string(y_hat));
  }
  if (y.empty()) throw UsageError(std::string(what) + ": empty batch");
}

// Element losses as functions of the residual r = y_hat - y, with derivatives.
struct MaeTerm {
  double value(double r) const { return std::abs(r); }
  double deriv(double r) const { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }
};
struct MseTerm {
  double value(double r) const { return r * r; }
  double deriv(double r) const { return 2.0 * r; }
};
struct BellTerm {
  BellConfig c;
  double value(double r) const {
    const double sr = c.score_scale * r;
    return c.gamma * (1.0 - std::exp(-(sr * sr) / (2.0 * c.sigma * c.sigma)));
  }
  double deriv(double r) const {
    const double s2 = c.score_scale * c.score_scale;
    const double e = std::exp(-(s2 * r * r) / (2.0 * c.sigma * c.sigma));
    return c.gamma * e * s2 * r / (c.sigma * c.sigma);
  }
};
template <class... Terms>
struct SumTerm {
  std::tuple<Terms...> terms;
  double value(double r) const {
    return std::apply([r](const auto&... t) { return (t.value(r) + ...); }, terms);
  }
  double deriv(double r) const {
    return std::apply([r](const auto&... t) { return (t.deriv(r) + ...); }, terms);
  }
};

template <class Term>
double mean_term(const Tensor& y, const Tensor& y_hat, const Term& term, const char* what) {
  require_same_shape(y, y_hat, what);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += term.value(y_hat[i] - y[i]);
  return s / static_cast<double>(y.size());
}

template <class Term>
Var mean_term_op(const Tensor& y, const Var& y_hat, Term term, const char* what) {
  const double v = mean_term(y, y_hat->value, term, what);
  return nn::make_op(
      Tensor::scalar(v), {y_hat},
      [y, y_hat, term](const Tensor& g, std::span<Tensor*> pg) {
        const double k = g[0] / static_cast<double>(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) (*pg[0])[i] += k * term.deriv(y_hat->value[i] - y[i]);
      },
      what);
}

}  // namespace

double mae_loss(const Tensor& y, const Tensor& y_hat) { return mean_term(y, y_hat, MaeTerm{}, "mae_loss"); }
double mse_loss(const Tensor& y, const Tensor& y_hat) { return mean_term(y, y_hat, MseTerm{}, "mse_loss"); }

double bell_loss(const Tensor& y, const Tensor& y_hat, const BellConfig& config) {
  config.validate();
  return mean_term(y, y_hat, BellTerm{config}, "bell_loss");
}

double composite_loss(const Tensor& y, const Tensor& y_hat, const BellConfig& config) {
  config.validate();
  return mean_term(y, y_hat, SumTerm<MaeTerm, MseTerm, BellTerm>{{MaeTerm{}, MseTerm{}, BellTerm{config}}},
                   "composite_loss");
}

Var mae_loss(const Tensor& y, const Var& y_hat) { return mean_term_op(y, y_hat, MaeTerm{}, "mae_loss"); }
Var mse_loss(const Tensor& y, const Var& y_hat) { return mean_term_op(y, y_hat, MseTerm{}, "mse_loss"); }

Var bell_loss(const Tensor& y, const Var& y_hat, const BellConfig& config) {
  config.validate();
  return mean_term_op(y, y_hat, BellTerm{config}, "bell_loss");
}

Var composite_loss(const Tensor& y, const Var& y_hat, const BellConfig& config) {
  config.validate();
  return mean_term_op(y, y_hat,
                      SumTerm<MaeTerm, MseTerm, BellTerm>{{MaeTerm{}, MseTerm{}, BellTerm{config}}},
                      "composite_loss");
}

// ---------------------------------------------------------------------------
// Similarity and multi-similarity loss

namespace {

// Row norms; throws on a zero row.
std::vector<double> row_norms(const Tensor& e) {
  std::vector<double> norms(e.rows());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    double s = 0.0;
    for (double v : e.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) {
      throw NumericError("embedding row " + std::to_string(i) + " has zero norm; cannot normalize");
    }
  }
  return norms;
}

Tensor normalized_rows(const Tensor& e, const std::vector<double>& norms) {
  Tensor u = e;
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (double& v : u.row(i)) v /= norms[i];
  return u;
}

// log(1 + sum_k exp(a_k)) with softmax-style weights d/da_k written into `w`.
double log1p_sum_exp(std::span<const double> a, std::vector<double>& w) {
  double m = 0.0;
  for (double v : a) m = std::max(m, v);
  double denom = std::exp(-m);
  w.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    w[k] = std::exp(a[k] - m);
    denom += w[k];
  }
  for (double& x : w) x /= denom;
  return m + std::log(denom);
}

double normalizer(const PairSets& pairs, const MSConfig& config) {
  if (config.literal_normalization) return static_cast<double>(kNumTraits * pairs.rows);
  std::size_t contributing = 0;
  for (const auto& t : pairs.terms) {
    if (!t.positives.empty() || !t.negatives.empty()) ++contributing;
  }
  return static_cast<double>(contributing);
}

const Tensor& sim_for(std::span<const Tensor> sims, std::size_t trait) {
  return sims.size() == 1 ? sims[0] : sims[trait];
}

// Loss value and, when `grads` is non-empty, dLoss/dSimilarity per matrix.
double ms_value_and_grad(std::span<const Tensor> sims, const PairSets& pairs, const MSConfig& config,
                         std::span<Tensor> grads) {
  const double norm = normalizer(pairs, config);
  if (norm == 0.0) return 0.0;
  double total = 0.0;
  std::vector<double> a;
  std::vector<double> w;
  for (const auto& term : pairs.terms) {
    const std::size_t i = term.anchor;
    const Tensor& sim = sim_for(sims, term.trait);
    Tensor* grad = grads.empty() ? nullptr : (grads.size() == 1 ? &grads[0] : &grads[term.trait]);
    if (!term.positives.empty()) {
      a.clear();
      for (std::size_t k : term.positives) a.push_back(-config.alpha * (sim(i, k) - config.lambda));
      total += log1p_sum_exp(a, w) / config.alpha;
      if (grad) {
        for (std::size_t q = 0; q < term.positives.size(); ++q) (*grad)(i, term.positives[q]) -= w[q] / norm;
      }
    }
    if (!term.negatives.empty()) {
      a.clear();
      for (std::size_t k : term.negatives) a.push_back(config.beta * (sim(i, k) - config.lambda));
      total += log1p_sum_exp(a, w) / config.beta;
      if (grad) {
        for (std::size_t q = 0; q < term.negatives.size(); ++q) (*grad)(i, term.negatives[q]) += w[q] / norm;
      }
    }
  }
  return total / norm;
}

Tensor column_block(const Tensor& e, std::size_t first, std::size_t last) {
  Tensor out(e.rows(), last - first);
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t c = first; c < last; ++c) out(i, c - first) = e(i, c);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> blocks_for(std::size_t dim, const MSConfig& config) {
  if (!config.trait_subspaces) return {{0, dim}};
  if (dim < kNumTraits) {
    throw DimensionError("trait subspaces need an embedding dim of at least 5, got " + std::to_string(dim));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 0; t < kNumTraits; ++t) out.push_back(trait_block(dim, t));
  return out;
}

}  // namespace

Tensor similarity_matrix(const Tensor& embeddings, bool normalize) {
  embeddings.require_finite("embeddings");
  if (!normalize) return nn::matmul_nt(embeddings, embeddings);
  const Tensor u = normalized_rows(embeddings, row_norms(embeddings));
  return nn::matmul_nt(u, u);
}

std::pair<std::size_t, std::size_t> trait_block(std::size_t dim, std::size_t trait) {
  if (trait >= kNumTraits) throw DimensionError("trait index out of range");
  return {trait * dim / kNumTraits, (trait + 1) * dim / kNumTraits};
}

std::vector<Tensor> trait_similarities(const Tensor& embeddings, const MSConfig& config) {
  std::vector<Tensor> out;
  for (const auto& [first, last] : blocks_for(embeddings.cols(), config)) {
    out.push_back(similarity_matrix(column_block(embeddings, first, last), config.normalize_embeddings));
  }
  return out;
}

PairSets build_pairs(std::span<const ClassLabels> labels, const Tensor& similarity, const MSConfig& config) {
  return build_pairs(labels, std::span<const Tensor>(&similarity, 1), config);
}

PairSets build_pairs(std::span<const ClassLabels> labels, std::span<const Tensor> sims, const MSConfig& config) {
  const std::size_t rows = labels.size();
  if (sims.size() != 1 && sims.size() != kNumTraits) {
    throw DimensionError("build_pairs: expected 1 or 5 similarity matrices, got " + std::to_string(sims.size()));
  }
  for (const auto& s : sims) {
    if (s.rows() != rows || s.cols() != rows) {
      throw DimensionError("build_pairs: similarity " + shape_string(s) + " for " + std::to_string(rows) +
                           " labelled rows");
    }
  }
  PairSets out;
  out.rows = rows;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t j = 0; j < kNumTraits; ++j) {
    const Tensor& similarity = sim_for(sims, j);
    for (std::size_t i = 0; i < rows; ++i) {
      const TraitClass ci = labels[i][j];
      if (config.extreme_anchors_only && !is_extreme(ci)) continue;
      ++out.anchor_candidates;
      pos.clear();
      neg.clear();
      for (std::size_t k = 0; k < rows; ++k) {
        if (k == i) continue;
        (labels[k][j] == ci ? pos : neg).push_back(k);
      }
      if (pos.empty() || neg.empty()) continue;

      double min_pos = std::numeric_limits<double>::infinity();
      for (std::size_t k : pos) min_pos = std::min(min_pos, similarity(i, k));
      double max_neg = -std::numeric_limits<double>::infinity();
      for (std::size_t k : neg) max_neg = std::max(max_neg, similarity(i, k));

      PairTerm term{i, j, {}, {}};
      for (std::size_t k : neg)
        if (similarity(i, k) > min_pos - config.margin) term.negatives.push_back(k);
      for (std::size_t k : pos)
        if (similarity(i, k) < max_neg + config.margin) term.positives.push_back(k);
      if (term.positives.empty() || term.negatives.empty()) continue;
      out.terms.push_back(std::move(term));
    }
  }
  return out;
}

double ms_loss_value(const Tensor& similarity, const PairSets& pairs, const MSConfig& config) {
  return ms_loss_value(std::span<const Tensor>(&similarity, 1), pairs, config);
}

double ms_loss_value(std::span<const Tensor> similarity, const PairSets& pairs, const MSConfig& config) {
  config.validate();
  return ms_value_and_grad(similarity, pairs, config, {});
}

MSLoss ms_loss(const Var& embeddings, std::span<const ClassLabels> labels, const MSConfig& config) {
  config.validate();
  const Tensor& e = embeddings->value;
  if (e.rows() != labels.size()) {
    throw DimensionError("ms_loss: " + std::to_string(e.rows()) + " embeddings for " +
                         std::to_string(labels.size()) + " label rows");
  }
  e.require_finite("embeddings");

  struct Block {
    std::size_t first = 0;
    std::size_t last = 0;
    Tensor u;
    std::vector<double> norms;
  };
  std::vector<Block> blocks;
  std::vector<Tensor> sims;
  for (const auto& [first, last] : blocks_for(e.cols(), config)) {
    Block b{first, last, column_block(e, first, last), {}};
    if (config.normalize_embeddings) {
      b.norms = row_norms(b.u);
      b.u = normalized_rows(b.u, b.norms);
    }
    sims.push_back(nn::matmul_nt(b.u, b.u));
    blocks.push_back(std::move(b));
  }
  PairSets pairs = build_pairs(labels, sims, config);

  std::vector<Tensor> grad_sims;
  for (const auto& s : sims) grad_sims.emplace_back(s.rows(), s.cols());
  const double value = ms_value_and_grad(sims, pairs, config, grad_sims);

  MSLoss out;
  out.terms = pairs.terms.size();
  out.anchor_candidates = pairs.anchor_candidates;
  out.value = nn::make_op(
      Tensor::scalar(value), {embeddings},
      [grad_sims = std::move(grad_sims), blocks = std::move(blocks),
       normalize = config.normalize_embeddings](const Tensor& g, std::span<Tensor*> pg) {
        Tensor& dst = *pg[0];
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          const Block& blk = blocks[b];
          const Tensor& gs = grad_sims[b];
          // S = U U^T  =>  dL/dU = (G + G^T) U
          Tensor sym = gs;
          for (std::size_t i = 0; i < sym.rows(); ++i)
            for (std::size_t k = 0; k < sym.cols(); ++k) sym(i, k) = gs(i, k) + gs(k, i);
          const Tensor gu = nn::matmul(sym, blk.u);
          for (std::size_t i = 0; i < gu.rows(); ++i) {
            const auto gi = gu.row(i);
            const auto ui = blk.u.row(i);
            double dot = 0.0;
            // u = e/|e|  =>  de = (gu - u (u . gu)) / |e|
            if (normalize)
              for (std::size_t c = 0; c < gi.size(); ++c) dot += ui[c] * gi[c];
            for (std::size_t c = 0; c < gi.size(); ++c) {
              const double d = normalize ? (gi[c] - ui[c] * dot) / blk.norms[i] : gi[c];
              dst(i, blk.first + c) += g[0] * d;
            }
          }
        }
      },
      "ms_loss");
  return out;
}

}  // namespace xmodal
