#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"

using namespace xmodal;
using nlohmann::json;

namespace {

void leaf_paths(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      leaf_paths(value, path, out);
    } else {
      out.push_back(path);
    }
  }
}

std::string error_of(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("presets") {
  const RunConfig desk = RunConfig::defaults();
  CHECK(desk.preset == "desk");
  CHECK(desk.seed == 7);
  CHECK(desk.synthetic.seed == 7);
  CHECK(desk.train.seed == 7);
  CHECK(desk.model.embedding == 16);
  CHECK_NOTHROW(desk.validate());

  const RunConfig paper = RunConfig::defaults("paper");
  CHECK(paper.synthetic.dims == std::array<std::size_t, 3>{88, 64, 64});
  CHECK(paper.model.siamese_dropout == 0.5);
  CHECK(paper.train.ms.lambda == 1.0);
  CHECK(paper.train.stage3.adam.lr0 == doctest::Approx(0.001));
  CHECK_THROWS_AS(RunConfig::defaults("huge"), ConfigError);
}

TEST_CASE("json round trip and overlay") {
  const RunConfig a = RunConfig::defaults();
  const RunConfig b = RunConfig::from_json(a.to_json());
  CHECK(b.to_json() == a.to_json());
  CHECK(RunConfig::from_json(json::object()).to_json() == a.to_json());

  const json overlay = {{"seed", 11}, {"loss", {{"ms", {{"alpha", 3.0}}}}}, {"eval", {{"trait", "ext"}}}};
  const RunConfig c = RunConfig::from_json(overlay);
  CHECK(c.seed == 11);
  CHECK(c.synthetic.seed == 11);
  CHECK(c.train.ms.alpha == 3.0);
  CHECK(c.train.ms.beta == a.train.ms.beta);
  CHECK(c.eval.trait == "ext");
  CHECK(c.model.to_json() == a.model.to_json());

  const RunConfig p = RunConfig::from_json({{"preset", "paper"}, {"model", {{"hidden", 40}}}});
  CHECK(p.model.hidden == 40);
  CHECK(p.model.embedding == RunConfig::defaults("paper").model.embedding);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_of({{"bogus", 1}}).find("'bogus'") != std::string::npos);
  CHECK(error_of({{"loss", {{"ms", {{"alfa", 2.0}}}}}}).find("loss.ms.alfa") != std::string::npos);
  CHECK(error_of({{"stages", {{"stage1", {{"audio", {{"adam", {{"lr", 1}}}}}}}}}}).find("stages.stage1.audio.adam.lr") !=
        std::string::npos);
}

TEST_CASE("wrong types and invalid values are config errors") {
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", "seven"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"preset", 3}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"loss", 1}}), ConfigError);
  CHECK(error_of({{"loss", {{"ms", {{"alpha", "x"}}}}}}).find("loss.ms") != std::string::npos);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"per_cell", 0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"pca_space", "input"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"model", "m3"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"trait", "xyz"}}}}), Error);
}

TEST_CASE("set_seed propagates") {
  RunConfig c = RunConfig::defaults();
  c.set_seed(99);
  CHECK(c.seed == 99);
  CHECK(c.synthetic.seed == 99);
  CHECK(c.train.seed == 99);
  CHECK(c.to_json().at("seed") == 99);
}

TEST_CASE("load from file") {
  const auto dir = std::filesystem::temp_directory_path() / "xmodal_test_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ok.json") << R"({"seed": 3, "eval": {"per_cell": 4}})";
  const RunConfig c = RunConfig::load(dir / "ok.json");
  CHECK(c.seed == 3);
  CHECK(c.eval.per_cell == 4);
  std::ofstream(dir / "bad.json") << "{\"seed\": ";
  CHECK_THROWS_AS(RunConfig::load(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(dir / "absent.json"), ConfigError);
}

TEST_CASE("every key is documented and listed in help") {
  std::vector<std::string> leaves;
  leaf_paths(RunConfig::defaults().to_json(), "", leaves);
  const auto docs = config_key_docs();
  REQUIRE(docs.size() == leaves.size());
  const std::string help = config_help();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    CHECK(docs[i].first == leaves[i]);
    CHECK_MESSAGE(!docs[i].second.empty(), leaves[i]);
    CHECK_MESSAGE(help.find("  " + leaves[i] + " [") != std::string::npos, leaves[i]);
  }
}

TEST_CASE("config hash") {
  const json a = RunConfig::defaults().to_json();
  const std::string h = config_hash(a);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_hash(a) == h);
  json b = a;
  b["seed"] = 8;
  CHECK(config_hash(b) != h);
  // FNV-1a 64 of the empty object "{}".
  std::uint64_t ref = 0xcbf29ce484222325ULL;
  for (unsigned char ch : std::string("{}")) {
    ref ^= ch;
    ref *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ref));
  CHECK(config_hash(json::object()) == std::string(buf));
}
