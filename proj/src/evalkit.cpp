#include "xmodal/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

using nlohmann::json;
using nn::Tensor;

double r_acc(const Tensor& y, const Tensor& y_hat) {
  if (!y.same_shape(y_hat)) throw DimensionError("r_acc: " + shape_string(y) + " vs " + shape_string(y_hat));
  if (y.empty()) throw UsageError("r_acc on an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return 1.0 - s / static_cast<double>(y.size());
}

TraitVector r_acc_per_trait(const Tensor& y, const Tensor& y_hat) {
  if (!y.same_shape(y_hat) || y.cols() != kNumTraits) {
    throw DimensionError("r_acc_per_trait: " + shape_string(y) + " vs " + shape_string(y_hat));
  }
  if (y.rows() == 0) throw UsageError("r_acc on an empty set");
  TraitVector out{};
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) s += std::abs(y(i, t) - y_hat(i, t));
    out[t] = 1.0 - s / static_cast<double>(y.rows());
  }
  return out;
}

namespace {

json score_json(const SubsetScore& s) {
  return {{"r_acc", s.count == 0 ? json(nullptr) : json(s.r_acc)}, {"count", s.count}};
}

SubsetScore column_score(const Tensor& y, const Tensor& y_hat, std::size_t t,
                         const std::function<bool(std::size_t)>& keep) {
  SubsetScore s;
  double err = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    if (!keep(i)) continue;
    err += std::abs(y(i, t) - y_hat(i, t));
    ++s.count;
  }
  s.r_acc = s.count == 0 ? std::numeric_limits<double>::quiet_NaN() : 1.0 - err / static_cast<double>(s.count);
  return s;
}

SubsetScore mean_score(const std::array<TraitScores, kNumTraits>& traits, SubsetScore TraitScores::*field) {
  SubsetScore out;
  double sum = 0.0;
  std::size_t with_data = 0;
  for (const auto& t : traits) {
    const SubsetScore& s = t.*field;
    out.count += s.count;
    if (s.count > 0) {
      sum += s.r_acc;
      ++with_data;
    }
  }
  out.r_acc = with_data == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(with_data);
  return out;
}

}  // namespace

json EvalReport::to_json() const {
  json traits_j = json::object();
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    traits_j[std::string(kTraitNames[t])] = {
        {"all", score_json(traits[t].all)}, {"low", score_json(traits[t].low)}, {"high", score_json(traits[t].high)}};
  }
  return {{"model", model},
          {"traits", traits_j},
          {"average", {{"all", score_json(average.all)}, {"low", score_json(average.low)}, {"high", score_json(average.high)}}}};
}

EvalReport extreme_subset_eval(const Tensor& y, const Tensor& y_hat, std::span<const ClassLabels> labels,
                               const std::string& model_id) {
  if (!y.same_shape(y_hat) || y.cols() != kNumTraits || labels.size() != y.rows()) {
    throw DimensionError("extreme_subset_eval: inconsistent shapes");
  }
  if (y.rows() == 0) throw UsageError("extreme_subset_eval on an empty set");
  EvalReport r;
  r.model = model_id;
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    r.traits[t].all = column_score(y, y_hat, t, [](std::size_t) { return true; });
    r.traits[t].low = column_score(y, y_hat, t, [&](std::size_t i) { return labels[i][t] == TraitClass::C1; });
    r.traits[t].high = column_score(y, y_hat, t, [&](std::size_t i) { return labels[i][t] == TraitClass::C4; });
  }
  r.average.all = mean_score(r.traits, &TraitScores::all);
  // The All average is the plain R_acc over every element.
  r.average.all.r_acc = r_acc(y, y_hat);
  r.average.all.count = y.rows();
  r.average.low = mean_score(r.traits, &TraitScores::low);
  r.average.high = mean_score(r.traits, &TraitScores::high);
  return r;
}

EvalReport extreme_subset_eval(const Split& test, const ClassThresholds& thresholds, const Tensor& y_hat,
                               const std::string& model_id) {
  std::vector<ClassLabels> labels;
  labels.reserve(test.size());
  for (const auto& s : test.samples) labels.push_back(assign_classes(s.traits, thresholds));
  return extreme_subset_eval(test.traits(), y_hat, labels, model_id);
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> ablation_table(const Dataset& data, const ModelConfig& model_config,
                                        const TrainConfig& config) {
  if (data.test.empty()) throw UsageError("ablation needs a non-empty test split");
  Model model = init_model(data, model_config, config);
  run_stage1(model, data, config);

  const Tensor test_y = data.test.traits();
  std::vector<AblationRow> rows;
  const auto add_row = [&](std::string_view name, const Tensor& raw) {
    AblationRow row;
    row.name = std::string(name);
    const Tensor pred = clip_prediction(raw);
    row.r_acc = r_acc_per_trait(test_y, pred);
    row.average = r_acc(test_y, pred);
    rows.push_back(std::move(row));
  };

  for (Modality m : kModalities) add_row(kAblationRows[index_of(m)], model.predict_monomodal(m, data.test));

  std::array<std::array<Tensor, kNumModalities>, 3> hidden;  // train, val, test
  const std::array<const Split*, 3> splits = {&data.train, &data.val, &data.test};
  for (std::size_t s = 0; s < 3; ++s)
    for (Modality m : kModalities)
      if (!splits[s]->empty()) hidden[s][index_of(m)] = model.hidden(m, *splits[s]);

  const std::array<std::pair<std::string_view, std::array<Modality, 2>>, 3> pairs = {{
      {"A+V", {Modality::audio, Modality::video}},
      {"A+T", {Modality::audio, Modality::text}},
      {"T+V", {Modality::text, Modality::video}},
  }};
  const auto& mc = model.config();
  for (const auto& [name, mods] : pairs) {
    const auto concat = [&](std::size_t s) {
      if (splits[s]->empty()) return Tensor();
      const std::array<Tensor, 2> parts{hidden[s][index_of(mods[0])], hidden[s][index_of(mods[1])]};
      return hstack(parts);
    };
    const std::string label = "ablation." + std::string(name);
    nn::Mlp body(label + ".m1", 2 * mc.hidden, {{mc.fused, nn::Activation::relu}}, mc.weight_decay,
                 derive_seed(config.seed, label + ".m1"));
    nn::Mlp head(label + ".p", mc.fused, {{kNumTraits, nn::Activation::linear}}, mc.weight_decay,
                 derive_seed(config.seed, label + ".p"));
    fit_regressor(body, head, concat(0), data.train.traits(), concat(1), data.val.traits(), config.plan(2),
                  config.bell, config.seed, label);
    add_row(name, head.infer(body.infer(concat(2))));
  }

  run_stage2(model, data, config);
  add_row("A+V+T", model.predict_baseline(data.test));
  run_stage3(model, data, config);
  run_stage4(model, data, config);
  add_row("Ours", model.predict_full(data.test));
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "model";
  for (auto t : kTraitNames) os << ',' << t;
  os << ",avg\n";
  for (const auto& r : rows) {
    os << r.name;
    for (double v : r.r_acc) os << ',' << v;
    os << ',' << r.average << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// PCA

SymmetricEigen symmetric_eigen(const Tensor& symmetric) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw DimensionError("symmetric_eigen needs a square matrix");
  Tensor a = symmetric;
  Tensor v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.values()) total += x * x;
  const double tol = 1e-30 * std::max(total, std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = Tensor(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

PCAModel pca_fit(const Tensor& points) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n < 3) throw UsageError("pca_fit needs at least 3 points");
  if (d < 2) throw DimensionError("pca_fit needs at least 2 dimensions");
  points.require_finite("pca input");

  PCAModel model;
  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) model.mean[c] += points(i, c);
  for (double& m : model.mean) m /= static_cast<double>(n);

  Tensor centered = points;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) centered(i, c) -= model.mean[c];
  Tensor cov = nn::matmul_tn(centered, centered);
  for (double& x : cov.values()) x /= static_cast<double>(n - 1);

  const auto eig = symmetric_eigen(cov);
  double trace = 0.0;
  for (std::size_t c = 0; c < d; ++c) trace += cov(c, c);
  if (!(eig.values[0] > 1e-14 * std::max(1.0, trace)) || trace <= 0.0) {
    throw DataError("pca_fit: data has rank 0 (all points identical)");
  }

  model.axes = Tensor(2, d);
  for (std::size_t k = 0; k < 2; ++k) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < d; ++c)
      if (std::abs(eig.vectors(c, k)) > std::abs(eig.vectors(arg, k))) arg = c;
    const double sign = eig.vectors(arg, k) < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < d; ++c) model.axes(k, c) = sign * eig.vectors(c, k);
    model.variance[k] = std::max(0.0, eig.values[k]);
  }
  return model;
}

Tensor pca_project(const PCAModel& model, const Tensor& points) {
  if (points.cols() != model.mean.size()) {
    throw DimensionError("pca_project: model fitted on " + std::to_string(model.mean.size()) + " dims, got " +
                         std::to_string(points.cols()));
  }
  Tensor centered = points;
  for (std::size_t i = 0; i < centered.rows(); ++i)
    for (std::size_t c = 0; c < centered.cols(); ++c) centered(i, c) -= model.mean[c];
  return nn::matmul_nt(centered, model.axes);
}

double silhouette_score(const Tensor& points, std::span<const int> labels) {
  const std::size_t n = points.rows();
  if (labels.size() != n) throw DimensionError("silhouette_score: label count mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw UsageError("silhouette_score needs at least two clusters");

  const auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < points.cols(); ++c) {
      const double d = points(i, c) - points(j, c);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[labels[j]] += dist(i, j);
    const std::size_t own = sizes[labels[i]];
    if (own <= 1) continue;  // singleton clusters score 0
    const double a = sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, cnt] : sizes)
      if (l != labels[i]) b = std::min(b, sum[l] / static_cast<double>(cnt));
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

std::vector<std::size_t> balanced_subsample(std::span<const EmbeddingTag> tags, std::size_t per_cell,
                                            std::uint64_t seed) {
  std::map<std::pair<std::size_t, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    cells[{index_of(tags[i].modality), static_cast<int>(tags[i].cls)}].push_back(i);
  }
  std::vector<std::size_t> out;
  for (auto& [key, members] : cells) {
    std::mt19937_64 rng(derive_seed(seed, "cell." + std::to_string(key.first) + "." + std::to_string(key.second)));
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take = std::min(per_cell, members.size());
    std::vector<std::size_t> chosen(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    out.insert(out.end(), chosen.begin(), chosen.end());
  }
  return out;
}

EmbeddingSpace embedding_space_from_string(std::string_view name) {
  if (name == "embedding") return EmbeddingSpace::embedding;
  if (name == "hidden") return EmbeddingSpace::hidden;
  throw UsageError("unknown embedding space '" + std::string(name) + "' (expected embedding or hidden)");
}

std::array<Tensor, kNumModalities> modality_vectors(const Model& model, const Split& split, EmbeddingSpace space,
                                                    const MSConfig& ms) {
  const int needed = space == EmbeddingSpace::embedding ? 3 : 1;
  if (model.stage() < needed) {
    throw UsageError("model finished stage " + std::to_string(model.stage()) + "; exporting " +
                     (space == EmbeddingSpace::embedding ? "embeddings" : "hidden vectors") +
                     " needs stage " + std::to_string(needed));
  }
  std::array<Tensor, kNumModalities> out;
  for (Modality m : kModalities) {
    if (space == EmbeddingSpace::hidden) {
      out[index_of(m)] = model.hidden(m, split);
      continue;
    }
    Tensor e = model.embeddings(m, split);
    std::vector<std::pair<std::size_t, std::size_t>> blocks{{0, e.cols()}};
    if (ms.trait_subspaces) {
      blocks.clear();
      for (std::size_t t = 0; t < kNumTraits; ++t) blocks.push_back(trait_block(e.cols(), t));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(blocks.size()));
    for (std::size_t i = 0; i < e.rows(); ++i) {
      for (const auto& [first, last] : blocks) {
        double norm = 0.0;
        for (std::size_t c = first; c < last; ++c) norm += e(i, c) * e(i, c);
        norm = std::sqrt(norm);
        if (norm == 0.0) throw NumericError("zero-norm embedding for sample " + split.samples[i].id);
        for (std::size_t c = first; c < last; ++c) e(i, c) *= scale / norm;
      }
    }
    out[index_of(m)] = std::move(e);
  }
  return out;
}

std::vector<EmbeddingPoint> embedding_points(const Model& model, const Split& split, std::string_view trait,
                                             std::size_t per_cell, EmbeddingSpace space, std::uint64_t seed,
                                             const MSConfig& ms) {
  const std::size_t t = trait_index(trait);
  const auto vectors = modality_vectors(model, split, space, ms);
  const auto labels = labels_for(model, split);

  std::vector<EmbeddingTag> tags;
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (modality, sample)
  for (Modality m : kModalities) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      tags.push_back({m, labels[i][t]});
      origin.emplace_back(index_of(m), i);
    }
  }
  const auto chosen = balanced_subsample(tags, per_cell, seed);
  if (chosen.size() < 3) throw DataError("too few samples to export embeddings");

  const std::size_t dim = vectors[0].cols();
  Tensor picked(chosen.size(), dim);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto [m, i] = origin[chosen[r]];
    for (std::size_t c = 0; c < dim; ++c) picked(r, c) = vectors[m](i, c);
  }
  const PCAModel pca = pca_fit(picked);
  const Tensor xy = pca_project(pca, picked);

  std::vector<EmbeddingPoint> out;
  out.reserve(chosen.size());
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto [m, i] = origin[chosen[r]];
    out.push_back({xy(r, 0), xy(r, 1), tags[chosen[r]].modality, tags[chosen[r]].cls, std::string(trait),
                   split.samples[i].traits[t]});
  }
  return out;
}

std::string pca_points_csv(std::span<const EmbeddingPoint> points) {
  std::ostringstream os;
  os.precision(17);
  os << kPcaCsvHeader << '\n';
  for (const auto& p : points) {
    os << p.x << ',' << p.y << ',' << to_string(p.modality) << ',' << to_string(p.cls) << ',' << p.trait << ','
       << p.value << '\n';
  }
  return os.str();
}

}  // namespace xmodal
