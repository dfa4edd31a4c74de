#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "xmodal/datamodel.hpp"
#include "xmodal/error.hpp"

using namespace xmodal;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xmodal_test_datamodel_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small_config(std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.n_samples = 300;
  c.dims = {4, 5, 3};
  c.seed = seed;
  return c;
}

// Held-out MAE of a ridge regression from all features to traits.
double ridge_probe_mae(const Dataset& d) {
  const auto design = [](const Split& s) {
    Eigen::MatrixXd x(s.size(), 0);
    for (Modality m : kModalities) {
      const Tensor f = s.features(m);
      Eigen::MatrixXd block(f.rows(), f.cols());
      for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t c = 0; c < f.cols(); ++c) block(i, c) = f(i, c);
      Eigen::MatrixXd joined(x.rows(), x.cols() + block.cols());
      joined << x, block;
      x = joined;
    }
    Eigen::MatrixXd with_bias(x.rows(), x.cols() + 1);
    with_bias << x, Eigen::VectorXd::Ones(x.rows());
    return with_bias;
  };
  const auto targets = [](const Split& s) {
    const Tensor t = s.traits();
    Eigen::MatrixXd y(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t c = 0; c < t.cols(); ++c) y(i, c) = t(i, c);
    return y;
  };
  const Eigen::MatrixXd x = design(d.train);
  const Eigen::MatrixXd gram = x.transpose() * x + 1e-3 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * targets(d.train));
  const Eigen::MatrixXd err = design(d.test) * w - targets(d.test);
  return err.cwiseAbs().mean();
}

}  // namespace

TEST_CASE("fit_thresholds worked example") {
  const std::vector<TraitVector> v{{0.2, 0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5, 0.5},
                                   {0.5, 0.5, 0.5, 0.5, 0.5}, {0.8, 0.5, 0.5, 0.5, 0.5}};
  const auto th = fit_thresholds(v);
  CHECK(th.mean[0] == doctest::Approx(0.5));
  CHECK(th.stddev[0] == doctest::Approx(0.212132).epsilon(1e-5));
  CHECK(th.low_cut(0) == doctest::Approx(0.287868).epsilon(1e-5));
  CHECK(th.high_cut(0) == doctest::Approx(0.712132).epsilon(1e-5));
  CHECK(classify_score(0.2, th.mean[0], th.stddev[0]) == TraitClass::C1);
  CHECK(classify_score(0.5, th.mean[0], th.stddev[0]) == TraitClass::C3);
  CHECK(classify_score(1.0, th.mean[0], th.stddev[0]) == TraitClass::C4);
  // Constant trait: sigma 0, every sample at the mean lands in C3.
  CHECK(th.stddev[1] == 0.0);
  CHECK(classify_score(0.5, th.mean[1], th.stddev[1]) == TraitClass::C3);

  const auto unbiased = fit_thresholds(v, true);
  CHECK(unbiased.stddev[0] == doctest::Approx(std::sqrt(0.18 / 3.0)));
  CHECK_THROWS_AS(fit_thresholds(std::span<const TraitVector>(v.data(), 1)), UsageError);
}

TEST_CASE("thresholds are translation invariant in sigma") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.2, 0.6);
  std::vector<TraitVector> a(50);
  for (auto& t : a)
    for (double& s : t) s = u(rng);
  std::vector<TraitVector> b = a;
  for (auto& t : b)
    for (double& s : t) s += 0.1;
  const auto ta = fit_thresholds(a);
  const auto tb = fit_thresholds(b);
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    CHECK(tb.mean[t] == doctest::Approx(ta.mean[t] + 0.1));
    CHECK(tb.stddev[t] == doctest::Approx(ta.stddev[t]));
  }
}

TEST_CASE("class assignment partitions [0,1] and matches the arithmetic oracle") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> sd(0.0, 0.3);
  for (int i = 0; i < 20000; ++i) {
    const double mean = u(rng);
    const double s = (i % 50 == 0) ? 0.0 : sd(rng);
    const double score = (i % 7 == 0) ? mean + s : u(rng);
    const TraitClass c = classify_score(score, mean, s);
    CHECK(c == oracle::trait_class(score, mean, s));
    const int k = static_cast<int>(c);
    CHECK((k >= 1 && k <= 4));
  }
}

TEST_CASE("gaussian class masses near phi targets") {
  SyntheticConfig c;
  c.n_samples = 10000;
  c.val_fraction = 0.0;
  c.test_fraction = 0.0;
  c.dims = {2, 2, 2};
  c.seed = 21;
  Dataset d = generate_synthetic(c);
  d.assign_labels();
  std::array<double, 4> mass{};
  for (const auto& s : d.train.samples) mass[static_cast<int>(s.classes[0]) - 1] += 1.0;
  const std::array<double, 4> target{15.87, 34.13, 34.13, 15.87};
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(100.0 * mass[k] / 10000.0 - target[k]) < 3.0);
}

TEST_CASE("min-max normalization") {
  const Tensor m = Tensor::from_rows({{2, 5}, {4, 5}, {6, 5}});
  auto [norm, stats] = minmax_normalize(m);
  CHECK(norm == Tensor::from_rows({{0, 0}, {0.5, 0}, {1, 0}}));
  // Idempotent on already-normalized data.
  CHECK(minmax_normalize(norm).first == norm);
  const Tensor test = Tensor::from_rows({{8, 5}, {0, 5}});
  CHECK(apply_minmax(test, stats) == Tensor::from_rows({{1, 0}, {0, 0}}));
  CHECK_THROWS_AS(apply_minmax(Tensor(1, 3), stats), DimensionError);
  CHECK_THROWS_AS(fit_minmax(Tensor(0, 2)), UsageError);
}

TEST_CASE("generator determinism, clipping and split sizes") {
  const Dataset a = generate_synthetic(small_config());
  const Dataset b = generate_synthetic(small_config());
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK_FALSE(generate_synthetic(small_config(4)).train == a.train);
  CHECK(a.train.size() + a.val.size() + a.test.size() == 300);
  CHECK(a.val.size() == 60);
  for (const Split* s : {&a.train, &a.val, &a.test})
    for (const auto& smp : s->samples)
      for (double t : smp.traits) CHECK((t >= 0.0 && t <= 1.0));

  SyntheticConfig flat = small_config();
  flat.trait_std = {0, 0, 0, 0, 0};
  Dataset d = generate_synthetic(flat);
  d.assign_labels();
  for (const auto& s : d.train.samples)
    for (auto c : s.classes) CHECK(c == TraitClass::C3);

  SyntheticConfig bad = small_config();
  bad.dims[1] = 0;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("uninformative features give mean-absolute-deviation error") {
  SyntheticConfig c = small_config();
  c.n_samples = 4000;
  c.informativeness = {0.0, 0.0, 0.0};
  const Dataset d = generate_synthetic(c);
  const Tensor y = d.test.traits();
  double mad = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t t = 0; t < kNumTraits; ++t) mad += std::abs(y(i, t) - 0.5);
  mad /= static_cast<double>(y.size());
  CHECK(ridge_probe_mae(d) == doctest::Approx(mad).epsilon(0.05));
}

TEST_CASE("higher informativeness never raises the ridge probe error") {
  double prev = 1e9;
  for (double w : {0.2, 0.6, 1.2}) {
    SyntheticConfig c = small_config(9);
    c.n_samples = 3000;
    c.informativeness = {w, w, w};
    const double mae = ridge_probe_mae(generate_synthetic(c));
    CHECK(mae <= prev);
    prev = mae;
  }
}

TEST_CASE("dataset save/load round trip") {
  const fs::path dir = scratch_dir("roundtrip");
  Dataset a = generate_synthetic(small_config());
  save_dataset(a, dir);
  Dataset b = load_dataset(dir);
  CHECK(b.dims == a.dims);
  CHECK(b.train.size() == a.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(b.train.samples[i].id == a.train.samples[i].id);
    CHECK(b.train.samples[i].traits == a.train.samples[i].traits);
    CHECK(b.train.samples[i].features == a.train.samples[i].features);
  }
  CHECK(a.assign_labels() == b.assign_labels());
}

TEST_CASE("malformed samples are rejected with their id") {
  const std::array<std::size_t, 3> dims{1, 1, 1};
  auto base = nlohmann::json::parse(
      R"({"id":"s42","traits":{"ext":0.1,"neu":0.2,"agr":0.3,"con":0.4,"ope":0.5},"audio":[1],"video":[2],"text":[3]})");
  CHECK(sample_from_json(base, &dims).id == "s42");

  auto high = base;
  high["traits"]["neu"] = 1.3;
  try {
    sample_from_json(high, &dims);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("s42") != std::string::npos);
  }
  auto no_video = base;
  no_video.erase("video");
  CHECK_THROWS_AS(sample_from_json(no_video, &dims), DataError);
  auto wrong_dim = base;
  wrong_dim["audio"] = {1, 2};
  CHECK_THROWS_AS(sample_from_json(wrong_dim, &dims), DataError);

  const fs::path dir = scratch_dir("bad");
  save_dataset(generate_synthetic(small_config()), dir);
  std::ofstream(dir / "val.jsonl", std::ios::app) << "{not json\n";
  CHECK_THROWS_AS(load_dataset(dir), DataError);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), DataError);
}

TEST_CASE("jsonl line format") {
  Sample s;
  s.id = "x";
  s.traits = {0.1, 0.2, 0.3, 0.4, 0.5};
  s.features = {std::vector<double>{1.0}, std::vector<double>{2.0}, std::vector<double>{3.0}};
  const auto j = nlohmann::json::parse(sample_to_jsonl(s));
  CHECK(j.at("traits").at("ope") == 0.5);
  CHECK(j.at("video").size() == 1);
  const std::array<std::size_t, 3> dims{1, 1, 1};
  CHECK(sample_from_json(j, &dims).traits == s.traits);
}
