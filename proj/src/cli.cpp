#include "xmodal/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/evalkit.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFormat = "xmodal-manifest";

struct CommonOptions {
  std::string config_path;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(source + " must be a non-negative integer, got '" + text + "'");
  }
  return v;
}

// Precedence: config file < XMODAL_SEED < --seed.
RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig::defaults() : RunConfig::load(o.config_path);
  if (const char* env = std::getenv("XMODAL_SEED"); env != nullptr && *env != '\0') {
    c.set_seed(parse_seed(env, "XMODAL_SEED"));
  }
  if (o.seed) c.set_seed(*o.seed);
  c.validate();
  return c;
}

Dataset acquire_dataset(const RunConfig& c, const std::string& flag, json* source) {
  const std::string dir = flag.empty() ? c.dataset_path : flag;
  if (!dir.empty()) {
    if (source) *source = {{"path", dir}};
    return load_dataset(dir);
  }
  if (source) *source = {{"synthetic", c.synthetic.to_json()}};
  return generate_synthetic(c.synthetic);
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void ensure_out_dir(const fs::path& dir, bool force, bool allow_existing = false) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (non_empty_dir(dir) && !force && !allow_existing) {
    throw UsageError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::pair<int, int> parse_stages(const std::string& spec) {
  int lo = 0;
  int hi = 0;
  const auto dash = spec.find('-');
  try {
    std::size_t used = 0;
    if (dash == std::string::npos) {
      lo = hi = std::stoi(spec, &used);
      if (used != spec.size()) throw std::invalid_argument(spec);
    } else {
      lo = std::stoi(spec.substr(0, dash), &used);
      if (used != dash) throw std::invalid_argument(spec);
      const std::string rest = spec.substr(dash + 1);
      hi = std::stoi(rest, &used);
      if (used != rest.size()) throw std::invalid_argument(spec);
    }
  } catch (const std::logic_error&) {
    throw UsageError("--stages expects K or K-L with 1 <= K <= L <= 4, got '" + spec + "'");
  }
  if (lo < 1 || hi > 4 || lo > hi) throw UsageError("--stages expects K or K-L with 1 <= K <= L <= 4, got '" + spec + "'");
  return {lo, hi};
}

std::string checkpoint_name(int stage) { return "stage" + std::to_string(stage) + ".ckpt.json"; }

json split_metrics(const Model& model, const Dataset& data) {
  json m = json::object();
  const nn::Tensor y = data.test.traits();
  if (model.stage() >= 1) {
    for (Modality mod : kModalities) {
      m[std::string("test_r_acc_") + std::string(to_string(mod))] =
          r_acc(y, clip_prediction(model.predict_monomodal(mod, data.test)));
    }
  }
  if (model.stage() >= 2) m["test_r_acc_baseline"] = r_acc(y, clip_prediction(model.predict_baseline(data.test)));
  if (model.stage() >= 4) m["test_r_acc_full"] = r_acc(y, clip_prediction(model.predict_full(data.test)));
  return m;
}

int cmd_gen(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  if (c.synthetic.n_samples == 0) throw ConfigError("dataset.synthetic.n_samples must be positive");
  const fs::path dir = o.out;
  ensure_out_dir(dir, o.force);
  const Dataset data = generate_synthetic(c.synthetic);
  save_dataset(data, dir);
  out << "wrote " << data.train.size() << '/' << data.val.size() << '/' << data.test.size()
      << " train/val/test samples to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::string& stages, std::ostream& out) {
  const auto [first, last] = parse_stages(stages);
  RunConfig c = resolve_config(o);
  const fs::path dir = o.out;

  Model model;
  json manifest;
  if (first > 1) {
    const fs::path prev = dir / checkpoint_name(first - 1);
    if (!fs::exists(prev)) {
      throw UsageError("stage " + std::to_string(first) + " needs the stage " + std::to_string(first - 1) +
                       " checkpoint " + prev.string() + ", which does not exist");
    }
    ensure_out_dir(dir, o.force, true);
    model = load_checkpoint(prev);
    if (model.stage() != first - 1) {
      throw UsageError(prev.string() + " holds a stage " + std::to_string(model.stage()) + " model");
    }
    std::ifstream in(dir / "manifest.json");
    if (in) manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded()) manifest = json();
  } else {
    ensure_out_dir(dir, o.force);
  }

  json source;
  Dataset data = acquire_dataset(c, o.dataset, &source);
  c.model.input_dims = data.dims;
  if (first == 1) {
    model = init_model(data, c.model, c.train);
  } else if (model.config().input_dims != data.dims) {
    throw DimensionError("checkpoint feature dims do not match the dataset");
  }

  const json config_j = c.to_json();
  const std::string hash = config_hash(config_j);
  if (!manifest.is_object() || manifest.value("config_hash", "") != hash) {
    manifest = {{"format", kManifestFormat}, {"version", 1}, {"stages", json::object()}, {"checkpoints", json::object()}};
  }
  manifest["config"] = config_j;
  manifest["config_hash"] = hash;
  manifest["dataset"] = source;
  manifest["dataset"]["sizes"] = {data.train.size(), data.val.size(), data.test.size()};
  manifest["dataset"]["dims"] = data.dims;
  manifest["thresholds"] = model.thresholds.to_json();

  for (int stage = first; stage <= last; ++stage) {
    json hist;
    switch (stage) {
      case 1: {
        hist = json::array();
        for (const auto& h : run_stage1(model, data, c.train)) hist.push_back(h.to_json());
        break;
      }
      case 2: hist = run_stage2(model, data, c.train).to_json(); break;
      case 3: hist = run_stage3(model, data, c.train).to_json(); break;
      default: hist = run_stage4(model, data, c.train).to_json(); break;
    }
    const std::string key = "stage" + std::to_string(stage);
    manifest["stages"][key] = hist;
    manifest["checkpoints"][key] = checkpoint_name(stage);
    save_checkpoint(model, dir / checkpoint_name(stage), {{"config_hash", hash}, {"config", config_j}});
    out << "stage " << stage << " done -> " << (dir / checkpoint_name(stage)).string() << '\n';
  }
  // Later checkpoints no longer follow from the stages just retrained.
  for (int stage = last + 1; stage <= 4; ++stage) {
    const std::string key = "stage" + std::to_string(stage);
    manifest["stages"].erase(key);
    manifest["checkpoints"].erase(key);
    fs::remove(dir / checkpoint_name(stage));
  }
  manifest["final_stage"] = model.stage();
  manifest["metrics"] = split_metrics(model, data);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << manifest["metrics"].dump(2) << '\n';
  return kExitOk;
}

std::string resolve_model_id(const std::string& requested, const Model& model) {
  if (requested != "auto") return requested;
  if (model.stage() >= 4) return "full";
  if (model.stage() >= 2) return "baseline";
  throw UsageError("checkpoint finished stage " + std::to_string(model.stage()) +
                   "; pass --model audio|video|text to score an encoder");
}

nn::Tensor predict(const Model& model, const std::string& id, const Split& split) {
  const auto need = [&](int stage) {
    if (model.stage() < stage) {
      throw UsageError("model '" + id + "' needs a stage " + std::to_string(stage) + " checkpoint, got stage " +
                       std::to_string(model.stage()));
    }
  };
  if (id == "full") {
    need(4);
    return model.predict_full(split);
  }
  if (id == "baseline") {
    need(2);
    return model.predict_baseline(split);
  }
  const Modality m = modality_from_string(id);
  need(1);
  return model.predict_monomodal(m, split);
}

// Model, config and dataset for commands that start from a checkpoint.
struct Loaded {
  Model model;
  RunConfig config;
  Dataset data;
};

Loaded load_for_eval(const std::string& checkpoint, const CommonOptions& o) {
  json extra;
  Loaded l{load_checkpoint(checkpoint, &extra), RunConfig::defaults(), {}};
  if (!o.config_path.empty()) {
    l.config = resolve_config(o);
  } else if (extra.contains("config")) {
    l.config = RunConfig::from_json(extra.at("config"));
    if (o.seed) l.config.set_seed(*o.seed);
  } else {
    l.config = resolve_config(o);
  }
  l.data = acquire_dataset(l.config, o.dataset, nullptr);
  if (l.model.config().input_dims != l.data.dims) throw DimensionError("checkpoint feature dims do not match the dataset");
  return l;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& model_flag, bool oracle,
             std::ostream& out) {
  Loaded l = load_for_eval(checkpoint, o);
  const std::string requested = model_flag.empty() ? l.config.eval.model : model_flag;
  const nn::Tensor y = l.data.test.traits();
  EvalReport report;
  if (oracle) {
    report = extreme_subset_eval(l.data.test, l.model.thresholds, y, "oracle");
  } else {
    const std::string id = resolve_model_id(requested, l.model);
    report = extreme_subset_eval(l.data.test, l.model.thresholds, clip_prediction(predict(l.model, id, l.data.test)), id);
  }
  const std::string text = report.to_json().dump(2) + "\n";
  const fs::path dir = o.out.empty() ? fs::path(checkpoint).parent_path() : fs::path(o.out);
  if (!dir.empty()) fs::create_directories(dir);
  write_text(dir / "report.json", text);
  out << text;
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o, std::ostream& out) {
  RunConfig c = resolve_config(o);
  const fs::path dir = o.out;
  ensure_out_dir(dir, o.force, true);
  if (fs::exists(dir / "ablation.csv") && !o.force) {
    throw UsageError((dir / "ablation.csv").string() + " exists; pass --force to overwrite");
  }
  Dataset data = acquire_dataset(c, o.dataset, nullptr);
  const auto rows = ablation_table(data, c.model, c.train);
  const std::string csv = ablation_csv(rows);
  write_text(dir / "ablation.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_embed(const CommonOptions& o, const std::string& checkpoint, std::optional<std::size_t> per_cell,
              const std::string& trait, const std::string& space, std::ostream& out) {
  Loaded l = load_for_eval(checkpoint, o);
  const std::size_t k = per_cell.value_or(l.config.eval.per_cell);
  const std::string t = trait.empty() ? l.config.eval.trait : trait;
  const std::string sp = space.empty() ? l.config.eval.pca_space : space;
  if (k == 0) throw UsageError("--per-cell must be positive");
  const auto points = embedding_points(l.model, l.data.test, t, k, embedding_space_from_string(sp),
                                       derive_seed(l.config.seed, "embed"), l.config.train.ms);
  const fs::path dir = o.out.empty() ? fs::path(checkpoint).parent_path() : fs::path(o.out);
  if (!dir.empty()) fs::create_directories(dir);
  write_text(dir / "pca_points.csv", pca_points_csv(points));
  out << "wrote " << points.size() << " points to " << (dir / "pca_points.csv").string() << '\n';
  return kExitOk;
}

void add_config(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "JSON run config; keys listed below");
  app->add_option("--seed", o.seed, "seed override (wins over XMODAL_SEED and the config)");
  app->footer(config_help());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal embedding training for apparent personality regression"};
  app.name("xmodal");
  app.require_subcommand(1);

  CommonOptions o;
  std::string stages = "1-4";
  std::string checkpoint;
  std::string model_flag;
  bool oracle = false;
  std::optional<std::size_t> per_cell;
  std::string trait;
  std::string space;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset directory");
  add_config(gen, o);
  gen->add_option("-o,--out", o.out, "output directory")->required();
  gen->add_flag("-f,--force", o.force, "write into a non-empty directory");

  auto* train = app.add_subcommand("train", "Run learning stages, writing checkpoints and manifest.json");
  add_config(train, o);
  train->add_option("-d,--dataset", o.dataset, "dataset directory (default: dataset.path or synthetic)");
  train->add_option("-o,--out", o.out, "run directory")->required();
  train->add_option("--stages", stages, "stage range K or K-L within 1-4")->capture_default_str();
  train->add_flag("-f,--force", o.force, "reuse a non-empty run directory");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the test split (All/Low/High R_acc)");
  add_config(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-d,--dataset", o.dataset, "dataset directory (default: the checkpoint's config)");
  eval->add_option("-o,--out", o.out, "directory for report.json (default: checkpoint directory)");
  eval->add_option("--model", model_flag, "auto, baseline, full, audio, video or text (default: eval.model)");
  eval->add_flag("--oracle", oracle, "debug: score the ground truth instead of the model");

  auto* ablate = app.add_subcommand("ablate", "Train every modality combination and write ablation.csv");
  add_config(ablate, o);
  ablate->add_option("-d,--dataset", o.dataset, "dataset directory (default: dataset.path or synthetic)");
  ablate->add_option("-o,--out", o.out, "output directory")->required();
  ablate->add_flag("-f,--force", o.force, "overwrite ablation.csv");

  auto* embed = app.add_subcommand("embed", "Export a 2-d PCA of test embeddings to pca_points.csv");
  add_config(embed, o);
  embed->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  embed->add_option("-d,--dataset", o.dataset, "dataset directory (default: the checkpoint's config)");
  embed->add_option("-o,--out", o.out, "directory for pca_points.csv (default: checkpoint directory)");
  embed->add_option("--per-cell", per_cell, "points per (modality, class) cell (default: eval.per_cell)");
  embed->add_option("--trait", trait, "trait defining the classes (default: eval.trait)");
  embed->add_option("--space", space, "embedding or hidden (default: eval.pca_space)");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (train->parsed()) return cmd_train(o, stages, out);
    if (eval->parsed()) return cmd_eval(o, checkpoint, model_flag, oracle, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
    if (embed->parsed()) return cmd_embed(o, checkpoint, per_cell, trait, space, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xmodal
