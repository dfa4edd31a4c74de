#pragma once

// Run configuration: one JSON document covering dataset generation, model
// shape, the four stage plans, loss parameters and evaluation options.
// Missing keys take defaults; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/datamodel.hpp"
#include "xmodal/model.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

struct EvalOptions {
  std::string trait = "neu";
  std::size_t per_cell = 25;
  /// "embedding" fits PCA on Siamese embeddings, "hidden" on encoder outputs.
  std::string pca_space = "embedding";
  /// "auto", "baseline", "full", "audio", "video" or "text".
  std::string model = "auto";
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  /// Dataset directory; empty means generate from `synthetic`.
  std::string dataset_path;
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;

  /// Defaults of a preset ("desk" or "paper").
  static RunConfig defaults(const std::string& preset = "desk");
  /// Overlays `j` on the defaults of j["preset"]. Throws ConfigError on
  /// unknown keys or wrong types.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  /// Full effective configuration, every default spelled out.
  nlohmann::json to_json() const;
  /// Seed override; also re-seeds the generator and trainer.
  void set_seed(std::uint64_t s);
  void validate() const;
};

/// Every configurable key as (dotted path, description), in document order.
std::vector<std::pair<std::string, std::string>> config_key_docs();
/// Human-readable key reference for --help.
std::string config_help();

/// FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace xmodal
