#include "xmodal/model.hpp"

#include <algorithm>
#include <fstream>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

using nlohmann::json;
using nn::Activation;
using nn::LayerSpec;
using nn::Tensor;
using nn::Var;

namespace {

constexpr std::array<std::string_view, kNumSubnets> kSubnetNames = {
    "f_audio", "f_video", "f_text", "p_audio", "p_video", "p_text",
    "m1",      "p_fused", "siamese", "m2",     "p_final"};

constexpr const char* kCheckpointFormat = "xmodal-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string_view to_string(Subnet s) { return kSubnetNames[static_cast<std::size_t>(s)]; }

ModelConfig ModelConfig::desk(const std::array<std::size_t, kNumModalities>& dims) {
  ModelConfig c;
  c.input_dims = dims;
  c.siamese_dropout = 0.0;
  return c;
}

ModelConfig ModelConfig::paper(const std::array<std::size_t, kNumModalities>& dims) {
  ModelConfig c;
  c.input_dims = dims;
  c.hidden = 256;
  c.fused = 512;
  c.embedding = 128;
  c.siamese_dropout = 0.5;
  c.siamese_hidden = {200, 200};
  c.encoder_dropout = {0.0, 0.5, 0.5};
  return c;
}

void ModelConfig::validate() const {
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (input_dims[m] == 0) throw ConfigError("model: input dim of " + std::string(kModalityNames[m]) + " must be positive");
    if (encoder_dropout[m] < 0.0 || encoder_dropout[m] >= 1.0) throw ConfigError("model: dropout must lie in [0,1)");
  }
  if (hidden == 0 || fused == 0 || embedding == 0) throw ConfigError("model: hidden, fused and embedding dims must be positive");
  if (siamese_hidden.empty()) throw ConfigError("model: siamese_hidden needs at least one layer");
  for (auto w : siamese_hidden)
    if (w == 0) throw ConfigError("model: siamese layer widths must be positive");
  if (siamese_dropout < 0.0 || siamese_dropout >= 1.0) throw ConfigError("model: dropout must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("model: weight_decay must be non-negative");
}

json ModelConfig::to_json() const {
  return {{"input_dims", input_dims},         {"hidden", hidden},
          {"fused", fused},                   {"embedding", embedding},
          {"siamese_hidden", siamese_hidden}, {"encoder_dropout", encoder_dropout},
          {"siamese_dropout", siamese_dropout}, {"weight_decay", weight_decay}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.input_dims = j.at("input_dims").get<std::array<std::size_t, kNumModalities>>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.fused = j.at("fused").get<std::size_t>();
  c.embedding = j.at("embedding").get<std::size_t>();
  c.siamese_hidden = j.at("siamese_hidden").get<std::vector<std::size_t>>();
  c.encoder_dropout = j.at("encoder_dropout").get<std::array<double, kNumModalities>>();
  c.siamese_dropout = j.at("siamese_dropout").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const auto& c = config_;
  const double wd = c.weight_decay;
  const auto seed_for = [&](Subnet s) { return derive_seed(seed, to_string(s)); };
  const auto build = [&](Subnet s, std::size_t in, std::vector<LayerSpec> layers, double decay,
                         double input_dropout = 0.0) {
    net(s) = nn::Mlp(std::string(to_string(s)), in, layers, decay, seed_for(s), input_dropout);
  };

  for (Modality m : kModalities) {
    // Two hidden layers, N -> Q -> Q.
    build(encoder_of(m), c.input_dims[index_of(m)],
          {{c.hidden, Activation::relu}, {c.hidden, Activation::relu}}, wd,
          c.encoder_dropout[index_of(m)]);
    build(head_of(m), c.hidden, {{kNumTraits, Activation::linear}}, wd);
  }
  build(Subnet::m1, kNumModalities * c.hidden, {{c.fused, Activation::relu}}, wd);
  build(Subnet::head_fused, c.fused, {{kNumTraits, Activation::linear}}, wd);

  std::vector<LayerSpec> siamese;
  for (std::size_t i = 0; i < c.siamese_hidden.size(); ++i) {
    siamese.push_back({c.siamese_hidden[i], Activation::relu, i == 0 ? c.siamese_dropout : 0.0});
  }
  siamese.push_back({c.embedding, Activation::linear});
  build(Subnet::siamese, c.hidden, siamese, 0.0);

  build(Subnet::m2, c.fused + kNumModalities * c.embedding, {{c.fused, Activation::relu}}, wd);
  build(Subnet::head_final, c.fused, {{kNumTraits, Activation::linear}}, wd);
}

void Model::set_stage(int stage) {
  if (stage < 0 || stage > 4) throw UsageError("stage marker must lie in 0..4");
  stage_ = stage;
}

Var Model::encode(Modality m, const Var& features, const nn::ForwardContext& ctx) const {
  return net(encoder_of(m)).forward(features, ctx);
}

Var Model::predict_head(Subnet head, const Var& h) const {
  if (head != Subnet::head_audio && head != Subnet::head_video && head != Subnet::head_text &&
      head != Subnet::head_fused && head != Subnet::head_final) {
    throw UsageError(std::string(to_string(head)) + " is not a trait head");
  }
  return net(head).forward(h, {});
}

Var Model::fuse_baseline(const Var& h_audio, const Var& h_video, const Var& h_text,
                         const nn::ForwardContext& ctx) const {
  if (!h_audio || !h_video || !h_text) throw UsageError("fuse_baseline needs all three modalities");
  const std::array<Var, 3> parts{h_audio, h_video, h_text};
  Var fused = net(Subnet::m1).forward(nn::concat_cols(parts), ctx);
  return predict_head(Subnet::head_fused, fused);
}

Var Model::embed(const Var& h, const nn::ForwardContext& ctx) const {
  return net(Subnet::siamese).forward(h, ctx);
}

Var Model::fuse_full(const Var& h_audio, const Var& h_video, const Var& h_text, const Var& e_audio,
                     const Var& e_video, const Var& e_text, const nn::ForwardContext& ctx) const {
  if (!h_audio || !h_video || !h_text || !e_audio || !e_video || !e_text) {
    throw UsageError("fuse_full needs all hidden representations and embeddings");
  }
  const std::array<Var, 3> hs{h_audio, h_video, h_text};
  Var fused = net(Subnet::m1).forward(nn::concat_cols(hs), ctx);
  const std::array<Var, 4> parts{fused, e_audio, e_video, e_text};
  Var mixed = net(Subnet::m2).forward(nn::concat_cols(parts), ctx);
  return predict_head(Subnet::head_final, mixed);
}

Tensor Model::normalized_features(Modality m, const Split& split) const {
  const auto& stats = feature_stats[index_of(m)];
  if (stats.min.empty()) throw UsageError("feature normalization has not been fitted");
  return apply_minmax(split.features(m), stats);
}

Tensor Model::hidden(Modality m, const Split& split) const {
  return net(encoder_of(m)).infer(normalized_features(m, split));
}

Tensor Model::embeddings(Modality m, const Split& split) const {
  return net(Subnet::siamese).infer(hidden(m, split));
}

Tensor Model::predict_monomodal(Modality m, const Split& split) const {
  return net(head_of(m)).infer(hidden(m, split));
}

Tensor Model::predict_baseline(const Split& split) const {
  const nn::ForwardContext eval{};
  return fuse_baseline(nn::constant(hidden(Modality::audio, split)), nn::constant(hidden(Modality::video, split)),
                       nn::constant(hidden(Modality::text, split)), eval)
      ->value;
}

Tensor Model::predict_full(const Split& split) const {
  const nn::ForwardContext eval{};
  std::array<Var, kNumModalities> h;
  std::array<Var, kNumModalities> e;
  for (Modality m : kModalities) {
    h[index_of(m)] = nn::constant(hidden(m, split));
    e[index_of(m)] = embed(h[index_of(m)], eval);
  }
  return fuse_full(h[0], h[1], h[2], e[0], e[1], e[2], eval)->value;
}

std::vector<Var> Model::all_parameters() const {
  std::vector<Var> out;
  for (const auto& n : nets_) {
    auto p = n.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

json Model::to_json() const {
  json nets = json::object();
  for (std::size_t i = 0; i < kNumSubnets; ++i) nets[std::string(kSubnetNames[i])] = nets_[i].to_json();
  json stats = json::array();
  for (const auto& s : feature_stats) stats.push_back(s.to_json());
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"stage", stage_},
          {"seed", seed_},
          {"config", config_.to_json()},
          {"feature_stats", stats},
          {"thresholds", thresholds.to_json()},
          {"subnets", nets}};
}

Model Model::from_json(const json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw DataError("not an xmodal checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  Model m;
  m.config_ = ModelConfig::from_json(j.at("config"));
  m.config_.validate();
  m.seed_ = j.at("seed").get<std::uint64_t>();
  m.set_stage(j.at("stage").get<int>());
  const auto& stats = j.at("feature_stats");
  for (std::size_t i = 0; i < kNumModalities; ++i) m.feature_stats[i] = MinMaxStats::from_json(stats.at(i));
  m.thresholds = ClassThresholds::from_json(j.at("thresholds"));
  const auto& nets = j.at("subnets");
  for (std::size_t i = 0; i < kNumSubnets; ++i) {
    m.nets_[i] = nn::Mlp::from_json(nets.at(std::string(kSubnetNames[i])));
  }
  return m;
}

Tensor clip_prediction(const Tensor& raw) {
  Tensor out = raw;
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const json& extra) {
  json j = model.to_json();
  j["extra"] = extra;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Model load_checkpoint(const std::filesystem::path& path, json* extra) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error&) {
    throw DataError("malformed checkpoint " + path.string());
  }
  if (extra != nullptr) *extra = j.value("extra", json::object());
  return Model::from_json(j);
}

}  // namespace xmodal
