#include "xmodal/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

using nlohmann::json;

namespace {

json plan_json(const StagePlan& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"patience", p.patience},
          {"stratified", p.stratified},
          {"adam",
           {{"lr0", p.adam.lr0},
            {"beta1", p.adam.beta1},
            {"beta2", p.adam.beta2},
            {"epsilon", p.adam.epsilon},
            {"decay_power", p.adam.decay_power},
            {"end_lr", p.adam.end_lr}}}};
}

StagePlan plan_from(const json& j, int stage) {
  StagePlan p;
  p.stage = stage;
  p.epochs = j.at("epochs").get<std::size_t>();
  p.batch_size = j.at("batch_size").get<std::size_t>();
  p.patience = j.at("patience").get<std::size_t>();
  p.stratified = j.at("stratified").get<bool>();
  const auto& a = j.at("adam");
  p.adam.lr0 = a.at("lr0").get<double>();
  p.adam.beta1 = a.at("beta1").get<double>();
  p.adam.beta2 = a.at("beta2").get<double>();
  p.adam.epsilon = a.at("epsilon").get<double>();
  p.adam.decay_power = a.at("decay_power").get<double>();
  p.adam.end_lr = a.at("end_lr").get<double>();
  return p;
}

void check_keys(const json& user, const json& reference, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), path);
  }
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      flatten(value, path, out);
    } else {
      out.emplace_back(path, value);
    }
  }
}

// Docs keyed by path; stage plan keys share one entry under "plan.".
const std::map<std::string, std::string>& key_docs() {
  static const std::map<std::string, std::string> docs = {
      {"preset", "\"desk\" (small dims, fast) or \"paper\" (published dims and schedules); picks the defaults"},
      {"seed", "master seed for generation, initialization, dropout and batching (env XMODAL_SEED, flag --seed)"},
      {"dataset.path", "directory with train/val/test JSONL and meta.json; empty generates from dataset.synthetic"},
      {"dataset.synthetic.n_samples", "total synthetic samples across train/val/test"},
      {"dataset.synthetic.val_fraction", "fraction of samples in the validation split"},
      {"dataset.synthetic.test_fraction", "fraction of samples in the test split"},
      {"dataset.synthetic.dims", "feature dims [audio, video, text]"},
      {"dataset.synthetic.trait_mean", "mean of each trait score [ext, neu, agr, con, ope]"},
      {"dataset.synthetic.trait_std", "std of each trait score before clipping to [0,1]"},
      {"dataset.synthetic.trait_correlation", "equicorrelation between the five latent traits, in [0,1)"},
      {"dataset.synthetic.noise", "Gaussian noise std per modality [audio, video, text]"},
      {"dataset.synthetic.informativeness", "trait-signal scale per modality [audio, video, text]"},
      {"model.hidden", "encoder output width Q"},
      {"model.fused", "fusion width O of M1 and M2"},
      {"model.embedding", "Siamese embedding width E"},
      {"model.siamese_hidden", "hidden layer widths of the Siamese projector"},
      {"model.encoder_dropout", "input dropout rate per encoder [audio, video, text]"},
      {"model.siamese_dropout", "dropout after the first Siamese hidden layer"},
      {"model.weight_decay", "L2 weight decay on dense weights outside the Siamese net"},
      {"plan.epochs", "maximum epochs"},
      {"plan.batch_size", "mini-batch size in samples (stage 3 batches hold 3x rows)"},
      {"plan.patience", "early-stopping patience in epochs on the validation loss"},
      {"plan.stratified", "guarantee an extreme (C1/C4) sample per trait in every batch"},
      {"plan.adam.lr0", "initial learning rate"},
      {"plan.adam.beta1", "Adam first-moment decay"},
      {"plan.adam.beta2", "Adam second-moment decay"},
      {"plan.adam.epsilon", "Adam denominator epsilon"},
      {"plan.adam.decay_power", "polynomial decay power of the learning-rate schedule"},
      {"plan.adam.end_lr", "learning rate reached at the final step"},
      {"loss.bell.sigma", "Bell loss width sigma"},
      {"loss.bell.gamma", "Bell loss scale gamma"},
      {"loss.bell.score_scale", "multiplier on residuals before the Bell loss (100 maps [0,1] to [0,100])"},
      {"loss.ms.alpha", "multi-similarity positive weight alpha"},
      {"loss.ms.beta", "multi-similarity negative weight beta"},
      {"loss.ms.lambda", "multi-similarity similarity offset lambda"},
      {"loss.ms.margin", "hard-pair mining margin epsilon"},
      {"loss.ms.extreme_anchors_only", "only C1/C4 rows act as anchors"},
      {"loss.ms.normalize_embeddings", "L2-normalize embeddings before dot products"},
      {"loss.ms.literal_normalization", "divide by 5 x rows instead of the number of contributing terms"},
      {"loss.ms.trait_subspaces", "trait j compares only the j-th of five embedding blocks; false compares whole embeddings"},
      {"unbiased_std", "use the n-1 standard deviation for class thresholds"},
      {"eval.trait", "trait used for embedding export classes (ext, neu, agr, con, ope)"},
      {"eval.per_cell", "embeddings sampled per (modality, class) cell on export"},
      {"eval.pca_space", "\"embedding\" or \"hidden\": which vectors the export PCA is fitted on"},
      {"eval.model", "predictor scored by eval: auto, baseline, full, audio, video or text"},
  };
  return docs;
}

std::string generic_path(const std::string& path) {
  static const std::vector<std::string> plan_prefixes = {
      "stages.stage1.audio.", "stages.stage1.video.", "stages.stage1.text.",
      "stages.stage2.",       "stages.stage3.",       "stages.stage4."};
  for (const auto& p : plan_prefixes) {
    if (path.rfind(p, 0) == 0) return "plan." + path.substr(p.size());
  }
  return path;
}

template <class T>
T get_as(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == "desk") {
    c.model = ModelConfig::desk(c.synthetic.dims);
    c.train = TrainConfig::desk();
  } else if (preset == "paper") {
    c.synthetic.dims = {88, 64, 64};
    c.model = ModelConfig::paper(c.synthetic.dims);
    c.train = TrainConfig::fidelity();
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  }
  c.set_seed(c.seed);
  return c;
}

json RunConfig::to_json() const {
  json syn = synthetic.to_json();
  syn.erase("seed");
  json model_j = model.to_json();
  model_j.erase("input_dims");
  json s1 = json::object();
  for (Modality m : kModalities) s1[std::string(to_string(m))] = plan_json(train.encoder_plan(m));
  json bell_j = train.bell;
  json ms_j = train.ms;
  return {{"preset", preset},
          {"seed", seed},
          {"dataset", {{"path", dataset_path}, {"synthetic", syn}}},
          {"model", model_j},
          {"stages",
           {{"stage1", s1},
            {"stage2", plan_json(train.stage2)},
            {"stage3", plan_json(train.stage3)},
            {"stage4", plan_json(train.stage4)}}},
          {"loss", {{"bell", bell_j}, {"ms", ms_j}}},
          {"unbiased_std", train.unbiased_std},
          {"eval",
           {{"trait", eval.trait}, {"per_cell", eval.per_cell}, {"pca_space", eval.pca_space}, {"model", eval.model}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string preset = "desk";
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("config key 'preset' must be a string");
    preset = j.at("preset").get<std::string>();
  }
  RunConfig c = defaults(preset);
  json merged = c.to_json();
  check_keys(j, merged, "");
  merged.merge_patch(j);

  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.dataset_path = merged.at("dataset").at("path").get<std::string>();
    json syn = merged.at("dataset").at("synthetic");
    syn["seed"] = c.seed;
    c.synthetic = SyntheticConfig::from_json(syn);

    json model_j = merged.at("model");
    model_j["input_dims"] = c.synthetic.dims;
    c.model = ModelConfig::from_json(model_j);

    const auto& st = merged.at("stages");
    for (Modality m : kModalities) {
      c.train.stage1[index_of(m)] = plan_from(st.at("stage1").at(std::string(to_string(m))), 1);
    }
    c.train.stage2 = plan_from(st.at("stage2"), 2);
    c.train.stage3 = plan_from(st.at("stage3"), 3);
    c.train.stage4 = plan_from(st.at("stage4"), 4);

    const auto& bell = merged.at("loss").at("bell");
    c.train.bell.sigma = get_as<double>(bell, "sigma", "loss.bell");
    c.train.bell.gamma = get_as<double>(bell, "gamma", "loss.bell");
    c.train.bell.score_scale = get_as<double>(bell, "score_scale", "loss.bell");
    const auto& ms = merged.at("loss").at("ms");
    c.train.ms.alpha = get_as<double>(ms, "alpha", "loss.ms");
    c.train.ms.beta = get_as<double>(ms, "beta", "loss.ms");
    c.train.ms.lambda = get_as<double>(ms, "lambda", "loss.ms");
    c.train.ms.margin = get_as<double>(ms, "margin", "loss.ms");
    c.train.ms.extreme_anchors_only = get_as<bool>(ms, "extreme_anchors_only", "loss.ms");
    c.train.ms.normalize_embeddings = get_as<bool>(ms, "normalize_embeddings", "loss.ms");
    c.train.ms.literal_normalization = get_as<bool>(ms, "literal_normalization", "loss.ms");
    c.train.ms.trait_subspaces = get_as<bool>(ms, "trait_subspaces", "loss.ms");
    c.train.unbiased_std = merged.at("unbiased_std").get<bool>();

    const auto& ev = merged.at("eval");
    c.eval.trait = get_as<std::string>(ev, "trait", "eval");
    c.eval.per_cell = get_as<std::size_t>(ev, "per_cell", "eval");
    c.eval.pca_space = get_as<std::string>(ev, "pca_space", "eval");
    c.eval.model = get_as<std::string>(ev, "model", "eval");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  synthetic.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  synthetic.validate();
  model.validate();
  train.validate();
  trait_index(eval.trait);
  if (eval.per_cell == 0) throw ConfigError("eval.per_cell must be positive");
  if (eval.pca_space != "embedding" && eval.pca_space != "hidden") {
    throw ConfigError("eval.pca_space must be \"embedding\" or \"hidden\"");
  }
  static const std::vector<std::string> models = {"auto", "baseline", "full", "audio", "video", "text"};
  if (std::find(models.begin(), models.end(), eval.model) == models.end()) {
    throw ConfigError("eval.model must be one of auto, baseline, full, audio, video, text");
  }
}

std::vector<std::pair<std::string, std::string>> config_key_docs() {
  std::vector<std::pair<std::string, json>> leaves;
  flatten(RunConfig::defaults().to_json(), "", leaves);
  std::vector<std::pair<std::string, std::string>> out;
  const auto& docs = key_docs();
  for (const auto& [path, value] : leaves) {
    auto it = docs.find(generic_path(path));
    out.emplace_back(path, it == docs.end() ? std::string() : it->second);
  }
  return out;
}

std::string config_help() {
  std::vector<std::pair<std::string, json>> leaves;
  flatten(RunConfig::defaults().to_json(), "", leaves);
  const auto docs = config_key_docs();
  std::ostringstream os;
  os << "Config keys (JSON file via --config; dotted paths, default in brackets):\n";
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    os << "  " << leaves[i].first << " [" << leaves[i].second.dump() << "]\n      " << docs[i].second << '\n';
  }
  return os.str();
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace xmodal
