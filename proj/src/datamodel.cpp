#include "xmodal/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

using nlohmann::json;
using nn::Tensor;

std::string_view to_string(Modality m) { return kModalityNames[index_of(m)]; }

Modality modality_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumModalities; ++i) {
    if (kModalityNames[i] == s) return kModalities[i];
  }
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

std::size_t trait_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumTraits; ++i) {
    if (kTraitNames[i] == name) return i;
  }
  throw ConfigError("unknown trait '" + std::string(name) + "'");
}

std::string to_string(TraitClass c) { return "C" + std::to_string(static_cast<int>(c)); }

std::vector<std::string> ClassThresholds::warnings() const {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    if (!(low_cut(t) > 0.0 && high_cut(t) < 1.0 && stddev[t] > 0.0)) {
      std::ostringstream os;
      os << "trait " << kTraitNames[t] << ": cut points (" << low_cut(t) << ", " << mean[t] << ", "
         << high_cut(t) << ") are degenerate or leave (0,1)";
      out.push_back(os.str());
    }
  }
  return out;
}

json ClassThresholds::to_json() const {
  return {{"mean", mean}, {"std", stddev}, {"unbiased", unbiased}};
}

ClassThresholds ClassThresholds::from_json(const json& j) {
  ClassThresholds t;
  t.mean = j.at("mean").get<TraitVector>();
  t.stddev = j.at("std").get<TraitVector>();
  t.unbiased = j.at("unbiased").get<bool>();
  return t;
}

ClassThresholds fit_thresholds(std::span<const TraitVector> train_traits, bool unbiased) {
  const std::size_t n = train_traits.size();
  if (n < 2) throw UsageError("fit_thresholds needs at least 2 training samples");
  ClassThresholds th;
  th.unbiased = unbiased;
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    double s = 0.0;
    for (const auto& tv : train_traits) s += tv[t];
    const double mean = s / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& tv : train_traits) ss += (tv[t] - mean) * (tv[t] - mean);
    th.mean[t] = mean;
    th.stddev[t] = std::sqrt(ss / static_cast<double>(unbiased ? n - 1 : n));
  }
  return th;
}

TraitClass classify_score(double score, double mean, double stddev) {
  if (stddev <= 0.0) return score < mean ? TraitClass::C2 : TraitClass::C3;
  if (score < mean - stddev) return TraitClass::C1;
  if (score < mean) return TraitClass::C2;
  if (score < mean + stddev) return TraitClass::C3;
  return TraitClass::C4;
}

ClassLabels assign_classes(const TraitVector& traits, const ClassThresholds& thresholds) {
  ClassLabels out{};
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    out[t] = classify_score(traits[t], thresholds.mean[t], thresholds.stddev[t]);
  }
  return out;
}

Tensor Split::features(Modality m) const {
  if (samples.empty()) return {};
  const std::size_t d = samples.front().feature(m).size();
  Tensor out(samples.size(), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& f = samples[i].feature(m);
    if (f.size() != d) throw DimensionError("sample " + samples[i].id + ": ragged " + std::string(to_string(m)));
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

Tensor Split::traits() const {
  Tensor out(samples.size(), kNumTraits);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t t = 0; t < kNumTraits; ++t) out(i, t) = samples[i].traits[t];
  return out;
}

std::vector<TraitVector> Split::trait_vectors() const {
  std::vector<TraitVector> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.traits);
  return out;
}

ClassThresholds Dataset::assign_labels(bool unbiased) {
  const auto th = fit_thresholds(train.trait_vectors(), unbiased);
  for (Split* split : {&train, &val, &test}) {
    for (auto& s : split->samples) s.classes = assign_classes(s.traits, th);
  }
  return th;
}

json MinMaxStats::to_json() const { return {{"min", min}, {"max", max}}; }

MinMaxStats MinMaxStats::from_json(const json& j) {
  MinMaxStats s;
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
  if (s.min.size() != s.max.size()) throw DataError("min-max stats of unequal length");
  return s;
}

MinMaxStats fit_minmax(const Tensor& matrix) {
  if (matrix.rows() == 0) throw UsageError("min-max normalization needs at least one sample");
  MinMaxStats s;
  s.min.assign(matrix.cols(), 0.0);
  s.max.assign(matrix.cols(), 0.0);
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    double lo = matrix(0, c);
    double hi = lo;
    for (std::size_t r = 1; r < matrix.rows(); ++r) {
      lo = std::min(lo, matrix(r, c));
      hi = std::max(hi, matrix(r, c));
    }
    s.min[c] = lo;
    s.max[c] = hi;
  }
  return s;
}

Tensor apply_minmax(const Tensor& matrix, const MinMaxStats& stats) {
  if (matrix.cols() != stats.min.size()) {
    throw DimensionError("min-max stats cover " + std::to_string(stats.min.size()) +
                         " features, matrix has " + std::to_string(matrix.cols()));
  }
  Tensor out(matrix.rows(), matrix.cols());
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    const double range = stats.max[c] - stats.min[c];
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
      out(r, c) = range > 0.0 ? std::clamp((matrix(r, c) - stats.min[c]) / range, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

std::pair<Tensor, MinMaxStats> minmax_normalize(const Tensor& matrix, const MinMaxStats* fitted) {
  MinMaxStats stats = fitted != nullptr ? *fitted : fit_minmax(matrix);
  Tensor out = apply_minmax(matrix, stats);
  return {std::move(out), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
  if (n_samples == 0) throw ConfigError("synthetic: n_samples must be positive");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ConfigError("synthetic: val_fraction + test_fraction must lie in [0,1)");
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (dims[m] == 0) throw ConfigError("synthetic: non-positive dim for " + std::string(kModalityNames[m]));
    if (noise[m] < 0.0 || informativeness[m] < 0.0) {
      throw ConfigError("synthetic: noise and informativeness must be non-negative");
    }
  }
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    if (trait_std[t] < 0.0) throw ConfigError("synthetic: trait_std must be non-negative");
  }
  if (trait_correlation < 0.0 || trait_correlation >= 1.0) {
    throw ConfigError("synthetic: trait_correlation must lie in [0,1)");
  }
}

json SyntheticConfig::to_json() const {
  return {{"n_samples", n_samples},
          {"val_fraction", val_fraction},
          {"test_fraction", test_fraction},
          {"dims", dims},
          {"trait_mean", trait_mean},
          {"trait_std", trait_std},
          {"trait_correlation", trait_correlation},
          {"noise", noise},
          {"informativeness", informativeness},
          {"seed", seed}};
}

SyntheticConfig SyntheticConfig::from_json(const json& j) {
  static const std::vector<std::string> known = {
      "n_samples", "val_fraction", "test_fraction", "dims",          "trait_mean",
      "trait_std", "trait_correlation", "noise",    "informativeness", "seed"};
  for (const auto& [k, _] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("synthetic: unknown key '" + k + "'");
    }
  }
  SyntheticConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
  };
  get("n_samples", c.n_samples);
  get("val_fraction", c.val_fraction);
  get("test_fraction", c.test_fraction);
  get("dims", c.dims);
  get("trait_mean", c.trait_mean);
  get("trait_std", c.trait_std);
  get("trait_correlation", c.trait_correlation);
  get("noise", c.noise);
  get("informativeness", c.informativeness);
  get("seed", c.seed);
  return c;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t n = config.n_samples;
  const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(n)));
  if (n_val + n_test >= n) throw ConfigError("synthetic: training split would be empty");

  std::normal_distribution<double> normal(0.0, 1.0);

  // Fixed projection per modality: N_m x 5, entries N(0, 1/5).
  std::array<Tensor, kNumModalities> proj;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    std::mt19937_64 rng(derive_seed(config.seed, "projection." + std::string(kModalityNames[m])));
    proj[m] = Tensor(config.dims[m], kNumTraits);
    for (double& v : proj[m].values()) v = normal(rng) / std::sqrt(static_cast<double>(kNumTraits));
  }

  std::mt19937_64 rng(derive_seed(config.seed, "samples"));
  const double rho = config.trait_correlation;
  Dataset data;
  data.dims = config.dims;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "s%06zu", i);
    s.id = id;

    const double shared = normal(rng);
    std::array<double, kNumTraits> z{};
    for (std::size_t t = 0; t < kNumTraits; ++t) {
      const double latent = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * normal(rng);
      s.traits[t] = std::clamp(config.trait_mean[t] + config.trait_std[t] * latent, 0.0, 1.0);
      z[t] = config.trait_std[t] > 0.0 ? (s.traits[t] - config.trait_mean[t]) / config.trait_std[t] : 0.0;
    }
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      auto& f = s.features[m];
      f.resize(config.dims[m]);
      for (std::size_t d = 0; d < config.dims[m]; ++d) {
        double signal = 0.0;
        for (std::size_t t = 0; t < kNumTraits; ++t) signal += proj[m](d, t) * z[t];
        f[d] = config.informativeness[m] * signal + config.noise[m] * normal(rng);
      }
    }
    Split& dst = i < n - n_val - n_test ? data.train : (i < n - n_test ? data.val : data.test);
    dst.samples.push_back(std::move(s));
  }
  data.meta = {{"dims", config.dims},
               {"counts", {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}}},
               {"generator", config.to_json()}};
  data.assign_labels();
  return data;
}

// ---------------------------------------------------------------------------
// JSONL I/O

std::string sample_to_jsonl(const Sample& s) {
  json traits = json::object();
  for (std::size_t t = 0; t < kNumTraits; ++t) traits[std::string(kTraitNames[t])] = s.traits[t];
  json j = {{"id", s.id}, {"traits", traits}};
  for (std::size_t m = 0; m < kNumModalities; ++m) j[std::string(kModalityNames[m])] = s.features[m];
  return j.dump();
}

Sample sample_from_json(const json& j, const std::array<std::size_t, kNumModalities>* dims) {
  if (!j.is_object()) throw DataError("sample record is not a JSON object");
  if (!j.contains("id") || !j.at("id").is_string()) throw DataError("sample record without string id");
  Sample s;
  s.id = j.at("id").get<std::string>();
  const auto fail = [&](const std::string& why) { return DataError("sample " + s.id + ": " + why); };

  if (!j.contains("traits") || !j.at("traits").is_object()) throw fail("missing traits block");
  const auto& traits = j.at("traits");
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    const std::string key(kTraitNames[t]);
    if (!traits.contains(key) || !traits.at(key).is_number()) throw fail("missing trait '" + key + "'");
    const double v = traits.at(key).get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw fail("trait '" + key + "' = " + std::to_string(v) + " outside [0,1]");
    s.traits[t] = v;
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::string key(kModalityNames[m]);
    if (!j.contains(key) || !j.at(key).is_array()) throw fail("missing '" + key + "' block");
    for (const auto& v : j.at(key)) {
      if (!v.is_number()) throw fail("non-numeric entry in '" + key + "'");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw fail("non-finite entry in '" + key + "'");
      s.features[m].push_back(x);
    }
    if (s.features[m].empty()) throw fail("empty '" + key + "' block");
    if (dims != nullptr && s.features[m].size() != (*dims)[m]) {
      throw fail("'" + key + "' has " + std::to_string(s.features[m].size()) + " features, expected " +
                 std::to_string((*dims)[m]));
    }
  }
  return s;
}

namespace {

constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};

void write_split(const Split& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : split.samples) out << sample_to_jsonl(s) << '\n';
}

Split read_split(const std::filesystem::path& path, std::array<std::size_t, kNumModalities>& dims,
                 bool& dims_known) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  Split split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.filename().string() + ":" + std::to_string(lineno) + ": malformed JSON");
    }
    Sample s = sample_from_json(j, dims_known ? &dims : nullptr);
    if (!dims_known) {
      for (std::size_t m = 0; m < kNumModalities; ++m) dims[m] = s.features[m].size();
      dims_known = true;
    }
    split.samples.push_back(std::move(s));
  }
  return split;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(data.train, dir / "train.jsonl");
  write_split(data.val, dir / "val.jsonl");
  write_split(data.test, dir / "test.jsonl");
  json meta = data.meta.is_object() ? data.meta : json::object();
  meta["dims"] = data.dims;
  meta["counts"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  std::ofstream out(dir / "meta.json", std::ios::binary);
  if (!out) throw DataError("cannot write meta.json in " + dir.string());
  out << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset data;
  bool dims_known = false;
  const auto meta_path = dir / "meta.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream in(meta_path);
    try {
      data.meta = json::parse(in);
    } catch (const json::parse_error&) {
      throw DataError("malformed meta.json in " + dir.string());
    }
    if (data.meta.contains("dims")) {
      data.dims = data.meta.at("dims").get<std::array<std::size_t, kNumModalities>>();
      dims_known = true;
    }
  }
  std::array<Split*, 3> splits = {&data.train, &data.val, &data.test};
  for (std::size_t k = 0; k < splits.size(); ++k) {
    *splits[k] = read_split(dir / (std::string(kSplitNames[k]) + ".jsonl"), data.dims, dims_known);
  }
  if (data.train.empty()) throw DataError("training split is empty in " + dir.string());
  return data;
}

}  // namespace xmodal
