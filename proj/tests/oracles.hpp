#pragma once

// Test-only reference implementations. Each one is written from the
// definition with plain loops and shares no code with the library routine it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "xmodal/datamodel.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/tensor.hpp"

namespace oracle {

using xmodal::ClassLabels;
using xmodal::TraitClass;
using xmodal::nn::Tensor;

/// Class index from counting the cut points at or below the score.
inline TraitClass trait_class(double score, double mean, double stddev) {
  if (!(stddev > 0.0)) return score < mean ? TraitClass::C2 : TraitClass::C3;
  const int c = 1 + (score >= mean - stddev ? 1 : 0) + (score >= mean ? 1 : 0) + (score >= mean + stddev ? 1 : 0);
  return static_cast<TraitClass>(c);
}

/// Similarity of rows i and k over columns [first, last).
inline double cosine_or_dot(const Tensor& e, std::size_t i, std::size_t k, bool normalize, std::size_t first,
                            std::size_t last) {
  double dot = 0.0;
  double ni = 0.0;
  double nk = 0.0;
  for (std::size_t c = first; c < last; ++c) {
    dot += e(i, c) * e(k, c);
    ni += e(i, c) * e(i, c);
    nk += e(k, c) * e(k, c);
  }
  return normalize ? dot / (std::sqrt(ni) * std::sqrt(nk)) : dot;
}

/// Multi-similarity loss by enumerating every (anchor, trait) pair directly.
inline double ms_loss(const Tensor& emb, const std::vector<ClassLabels>& labels, const xmodal::MSConfig& cfg,
                      std::size_t* terms_out = nullptr) {
  const std::size_t n = emb.rows();
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < xmodal::kNumTraits; ++j) {
      // Five blocks: trait j owns columns [j*E/5, (j+1)*E/5).
      const std::size_t first = cfg.trait_subspaces ? j * emb.cols() / 5 : 0;
      const std::size_t last = cfg.trait_subspaces ? (j + 1) * emb.cols() / 5 : emb.cols();
      const auto sim = [&](std::size_t r, std::size_t k) {
        return cosine_or_dot(emb, r, k, cfg.normalize_embeddings, first, last);
      };
      const TraitClass a = labels[i][j];
      const bool extreme = a == TraitClass::C1 || a == TraitClass::C4;
      if (cfg.extreme_anchors_only && !extreme) continue;
      double min_pos = std::numeric_limits<double>::infinity();
      double max_neg = -std::numeric_limits<double>::infinity();
      bool any_pos = false;
      bool any_neg = false;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        const double d = sim(i, k);
        if (labels[k][j] == a) {
          any_pos = true;
          min_pos = std::min(min_pos, d);
        } else {
          any_neg = true;
          max_neg = std::max(max_neg, d);
        }
      }
      if (!any_pos || !any_neg) continue;
      double pos_sum = 0.0;
      double neg_sum = 0.0;
      std::size_t kept_pos = 0;
      std::size_t kept_neg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        const double d = sim(i, k);
        if (labels[k][j] == a && d < max_neg + cfg.margin) {
          pos_sum += std::exp(-cfg.alpha * (d - cfg.lambda));
          ++kept_pos;
        }
        if (labels[k][j] != a && d > min_pos - cfg.margin) {
          neg_sum += std::exp(cfg.beta * (d - cfg.lambda));
          ++kept_neg;
        }
      }
      if (kept_pos == 0 || kept_neg == 0) continue;
      total += std::log(1.0 + pos_sum) / cfg.alpha + std::log(1.0 + neg_sum) / cfg.beta;
      ++terms;
    }
  }
  if (terms_out) *terms_out = terms;
  const double norm = cfg.literal_normalization ? static_cast<double>(xmodal::kNumTraits * n)
                                                : static_cast<double>(terms);
  return terms == 0 ? 0.0 : total / norm;
}

/// Central finite-difference gradient of `f` at `x`.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
  Tensor g(x.rows(), x.cols());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<ClassLabels> random_labels(std::size_t rows, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(1, 4);
  std::vector<ClassLabels> out(rows);
  for (auto& l : out)
    for (auto& c : l) c = static_cast<TraitClass>(pick(rng));
  return out;
}

/// Labels of a triple-size batch: `n` samples repeated for three modalities.
inline std::vector<ClassLabels> random_triple_labels(std::size_t n, std::mt19937_64& rng) {
  const auto base = random_labels(n, rng);
  std::vector<ClassLabels> out;
  for (int m = 0; m < 3; ++m) out.insert(out.end(), base.begin(), base.end());
  return out;
}

}  // namespace oracle
