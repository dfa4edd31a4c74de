#include "xmodal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xmodal/error.hpp"
#include "xmodal/evalkit.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

using nlohmann::json;
using nn::Tensor;
using nn::Var;

void StagePlan::validate() const {
  if (stage < 1 || stage > 4) throw ConfigError("stage id must lie in 1..4");
  if (epochs == 0) throw ConfigError("stage " + std::to_string(stage) + ": epochs must be positive");
  if (batch_size == 0) throw ConfigError("stage " + std::to_string(stage) + ": batch_size must be positive");
  nn::AdamConfig probe = adam;
  probe.total_steps = 1;
  probe.validate();
}

json StagePlan::to_json() const {
  json a = adam;
  a.erase("total_steps");
  return {{"stage", stage},       {"epochs", epochs},   {"batch_size", batch_size},
          {"patience", patience}, {"adam", a},          {"stratified", stratified}};
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  for (auto& p : c.stage1) p.stage = 1;
  c.stage2.stage = 2;
  c.stage3.stage = 3;
  c.stage3.stratified = true;
  c.stage4.stage = 4;
  c.stage2.epochs = c.stage4.epochs = 300;
  c.stage2.patience = c.stage4.patience = 30;
  c.stage3.epochs = 100;
  c.stage3.patience = 20;
  c.stage3.adam.lr0 = 0.01;
  c.ms.lambda = 0.5;
  return c;
}

TrainConfig TrainConfig::fidelity() {
  TrainConfig c = desk();
  c.stage1[index_of(Modality::audio)].batch_size = 128;
  c.stage1[index_of(Modality::audio)].epochs = 100;
  c.stage1[index_of(Modality::video)].batch_size = 22;
  c.stage1[index_of(Modality::video)].epochs = 80;
  c.stage1[index_of(Modality::text)].epochs = 50;
  for (auto& p : c.stage1) p.patience = 10;
  c.stage2.epochs = c.stage3.epochs = c.stage4.epochs = 100;
  c.stage2.patience = c.stage3.patience = c.stage4.patience = 10;
  c.stage3.adam.lr0 = nn::AdamConfig{}.lr0;
  c.ms.lambda = MSConfig{}.lambda;
  return c;
}

const StagePlan& TrainConfig::plan(int stage) const {
  switch (stage) {
    case 2: return stage2;
    case 3: return stage3;
    case 4: return stage4;
    default: throw UsageError("plan() covers stages 2..4; use encoder_plan() for stage 1");
  }
}

void TrainConfig::validate() const {
  for (const auto& p : stage1) {
    if (p.stage != 1) throw ConfigError("stage-1 plans must carry stage id 1");
    p.validate();
  }
  for (int s = 2; s <= 4; ++s) {
    if (plan(s).stage != s) throw ConfigError("stage plan id mismatch for stage " + std::to_string(s));
    plan(s).validate();
  }
  bell.validate();
  ms.validate();
}

json TrainConfig::to_json() const {
  json s1 = json::object();
  for (Modality m : kModalities) s1[std::string(to_string(m))] = encoder_plan(m).to_json();
  json bell_j = bell;
  json ms_j = ms;
  return {{"stage1", s1},
          {"stage2", stage2.to_json()},
          {"stage3", stage3.to_json()},
          {"stage4", stage4.to_json()},
          {"bell", bell_j},
          {"ms", ms_j},
          {"unbiased_std", unbiased_std},
          {"seed", seed}};
}

json StageHistory::to_json() const {
  return {{"stage", stage},
          {"label", label},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"epochs_run", val_loss.size()},
          {"best_epoch", best_epoch},
          {"skipped_batches", skipped_batches},
          {"val_r_acc", val_r_acc}};
}

bool early_stop(std::span<const double> val_history, std::size_t patience) {
  if (val_history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_history.size(); ++i) {
    if (val_history[i] < val_history[best]) best = i;
  }
  return val_history.size() - 1 - best >= patience;
}

std::vector<ClassLabels> labels_for(const Model& model, const Split& split) {
  std::vector<ClassLabels> out;
  out.reserve(split.size());
  for (const auto& s : split.samples) out.push_back(assign_classes(s.traits, model.thresholds));
  return out;
}

Model init_model(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config) {
  if (data.train.empty()) throw UsageError("training split is empty");
  config.validate();
  ModelConfig mc = model_config;
  mc.input_dims = data.dims;
  Model model(mc, derive_seed(config.seed, "model"));
  for (Modality m : kModalities) model.feature_stats[index_of(m)] = fit_minmax(data.train.features(m));
  model.thresholds = fit_thresholds(data.train.trait_vectors(), config.unbiased_std);
  return model;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const ClassLabels> labels,
                                                   std::size_t batch_size, bool stratify,
                                                   std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  if (!stratify) {
    for (std::size_t at = 0; at < n; at += batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, at + batch_size)));
    }
    return batches;
  }

  // Per-trait queues of extreme samples in shuffled order.
  std::array<std::vector<std::size_t>, kNumTraits> extremes;
  for (std::size_t i : order)
    for (std::size_t t = 0; t < kNumTraits; ++t)
      if (is_extreme(labels[i][t])) extremes[t].push_back(i);
  std::array<std::size_t, kNumTraits> cursor{};

  std::vector<bool> used(n, false);
  std::size_t fill = 0;
  const std::size_t n_batches = (n + batch_size - 1) / batch_size;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::size_t> batch;
    const auto has_extreme = [&](std::size_t t) {
      return std::any_of(batch.begin(), batch.end(), [&](std::size_t i) { return is_extreme(labels[i][t]); });
    };
    for (std::size_t t = 0; t < kNumTraits && batch.size() < batch_size; ++t) {
      if (extremes[t].empty() || has_extreme(t)) continue;
      auto& q = extremes[t];
      while (cursor[t] < q.size() && used[q[cursor[t]]]) ++cursor[t];
      std::size_t pick;
      if (cursor[t] < q.size()) {
        pick = q[cursor[t]++];
      } else {
        // Queue exhausted: reuse a random extreme sample not already in this batch.
        std::uniform_int_distribution<std::size_t> any(0, q.size() - 1);
        pick = q[any(rng)];
        if (std::find(batch.begin(), batch.end(), pick) != batch.end()) continue;
      }
      used[pick] = true;
      batch.push_back(pick);
    }
    while (batch.size() < batch_size && fill < n) {
      const std::size_t i = order[fill++];
      if (used[i]) continue;
      used[i] = true;
      batch.push_back(i);
    }
    if (!batch.empty()) batches.push_back(std::move(batch));
  }
  return batches;
}

Tensor stack_triple(const std::array<Tensor, kNumModalities>& hidden, std::span<const std::size_t> batch) {
  std::array<Tensor, kNumModalities> parts;
  for (std::size_t m = 0; m < kNumModalities; ++m) parts[m] = gather_rows(hidden[m], batch);
  return vstack(parts);
}

std::vector<ClassLabels> triple_labels(std::span<const ClassLabels> labels, std::span<const std::size_t> batch) {
  std::vector<ClassLabels> out;
  out.reserve(kNumModalities * batch.size());
  for (std::size_t m = 0; m < kNumModalities; ++m)
    for (std::size_t i : batch) out.push_back(labels[i]);
  return out;
}

namespace {

std::vector<Var> trainable(std::initializer_list<const nn::Mlp*> nets) {
  std::vector<Var> out;
  for (const auto* n : nets) {
    for (const auto& p : n->parameters())
      if (!p->frozen) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> snapshot(std::span<const Var> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->value);
  return out;
}

void restore(std::span<const Var> params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

void require_stage(const Model& model, int expected_previous, int stage) {
  if (model.stage() != expected_previous) {
    throw UsageError("stage " + std::to_string(stage) + " requires a model finished at stage " +
                     std::to_string(expected_previous) + ", got stage " + std::to_string(model.stage()));
  }
}

}  // namespace

StageHistory fit_regressor(nn::Mlp& body, nn::Mlp& head, const Tensor& train_x, const Tensor& train_y,
                           const Tensor& val_x, const Tensor& val_y, const StagePlan& plan,
                           const BellConfig& bell, std::uint64_t seed, const std::string& label) {
  plan.validate();
  if (train_x.rows() == 0) throw UsageError(label + ": empty training split");
  if (train_x.rows() != train_y.rows() || val_x.rows() != val_y.rows()) {
    throw DimensionError(label + ": feature/target row mismatch");
  }
  const bool has_val = val_x.rows() > 0;

  StageHistory hist;
  hist.stage = plan.stage;
  hist.label = label;

  nn::AdamConfig adam_cfg = plan.adam;
  adam_cfg.total_steps = plan.epochs * batches_per_epoch(train_x.rows(), plan.batch_size);
  nn::Adam adam(adam_cfg);
  const auto params = trainable({&body, &head});
  std::mt19937_64 rng(derive_seed(seed, label));
  const nn::ForwardContext train_ctx{nn::Mode::train, &rng};
  const auto predict = [&](const Tensor& x) { return head.infer(body.infer(x)); };

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = snapshot(params);
  const std::vector<ClassLabels> no_labels(train_x.rows());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& batch : make_batches(no_labels, plan.batch_size, false, rng)) {
      const Tensor x = gather_rows(train_x, batch);
      const Tensor y = gather_rows(train_y, batch);
      Var loss = composite_loss(y, head.forward(body.forward(nn::constant(x), train_ctx), {}), bell);
      epoch_loss += loss->value.item() * static_cast<double>(batch.size());
      const auto grads = nn::backward(loss);
      adam.step(params, grads, step++);
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(train_x.rows()));
    const double v = has_val ? composite_loss(val_y, predict(val_x), bell) : hist.train_loss.back();
    hist.val_loss.push_back(v);
    if (v < best) {
      best = v;
      best_params = snapshot(params);
      hist.best_epoch = epoch;
    }
    if (early_stop(hist.val_loss, plan.patience)) break;
  }
  restore(params, best_params);
  if (has_val) hist.val_r_acc = r_acc(val_y, clip_prediction(predict(val_x)));
  return hist;
}

std::vector<StageHistory> run_stage1(Model& model, const Dataset& data, const TrainConfig& config) {
  require_stage(model, 0, 1);
  if (data.train.empty()) throw UsageError("stage 1: empty training split");
  std::vector<StageHistory> out;
  const Tensor ty = data.train.traits();
  const Tensor vy = data.val.traits();
  for (Modality m : kModalities) {
    const Tensor tx = model.normalized_features(m, data.train);
    const Tensor vx = data.val.empty() ? Tensor() : model.normalized_features(m, data.val);
    out.push_back(fit_regressor(model.net(encoder_of(m)), model.net(head_of(m)), tx, ty, vx, vy,
                                config.encoder_plan(m), config.bell, config.seed,
                                "stage1." + std::string(to_string(m))));
    model.freeze(encoder_of(m));
    model.freeze(head_of(m));
  }
  model.set_stage(1);
  return out;
}

namespace {

Tensor hidden_concat(const Model& model, const Split& split) {
  if (split.empty()) return {};
  std::array<Tensor, kNumModalities> hs;
  for (Modality m : kModalities) hs[index_of(m)] = model.hidden(m, split);
  return hstack(hs);
}

Tensor full_inputs(const Model& model, const Split& split) {
  if (split.empty()) return {};
  std::array<Tensor, kNumModalities> hs;
  for (Modality m : kModalities) hs[index_of(m)] = model.hidden(m, split);
  std::array<Tensor, 1 + kNumModalities> parts;
  parts[0] = model.net(Subnet::m1).infer(hstack(hs));
  for (std::size_t m = 0; m < kNumModalities; ++m) parts[1 + m] = model.net(Subnet::siamese).infer(hs[m]);
  return hstack(parts);
}

}  // namespace

StageHistory run_stage2(Model& model, const Dataset& data, const TrainConfig& config) {
  require_stage(model, 1, 2);
  auto hist = fit_regressor(model.net(Subnet::m1), model.net(Subnet::head_fused), hidden_concat(model, data.train),
                            data.train.traits(), hidden_concat(model, data.val), data.val.traits(),
                            config.plan(2), config.bell, config.seed, "stage2");
  model.freeze(Subnet::m1);
  model.freeze(Subnet::head_fused);
  model.set_stage(2);
  return hist;
}

StageHistory run_stage3(Model& model, const Dataset& data, const TrainConfig& config) {
  require_stage(model, 2, 3);
  const StagePlan& plan = config.plan(3);
  plan.validate();
  if (data.train.empty()) throw UsageError("stage 3: empty training split");

  std::array<Tensor, kNumModalities> train_h;
  std::array<Tensor, kNumModalities> val_h;
  for (Modality m : kModalities) {
    train_h[index_of(m)] = model.hidden(m, data.train);
    if (!data.val.empty()) val_h[index_of(m)] = model.hidden(m, data.val);
  }
  const auto train_labels = labels_for(model, data.train);
  const auto val_labels = labels_for(model, data.val);

  nn::Mlp& siamese = model.net(Subnet::siamese);
  nn::AdamConfig adam_cfg = plan.adam;
  adam_cfg.total_steps = plan.epochs * batches_per_epoch(data.train.size(), plan.batch_size);
  nn::Adam adam(adam_cfg);
  const auto params = trainable({&siamese});
  std::mt19937_64 rng(derive_seed(config.seed, "stage3"));
  const nn::ForwardContext train_ctx{nn::Mode::train, &rng};

  // Validation MS loss in eval mode over fixed sequential chunks.
  const auto val_loss = [&]() {
    std::array<Tensor, kNumModalities> emb;
    for (std::size_t m = 0; m < kNumModalities; ++m) emb[m] = siamese.infer(val_h[m]);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t at = 0; at < val_labels.size(); at += plan.batch_size) {
      std::vector<std::size_t> chunk(std::min(plan.batch_size, val_labels.size() - at));
      std::iota(chunk.begin(), chunk.end(), at);
      const auto res = ms_loss(nn::constant(stack_triple(emb, chunk)), triple_labels(val_labels, chunk), config.ms);
      if (res.terms == 0) continue;
      total += res.value->value.item();
      ++counted;
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
  };

  StageHistory hist;
  hist.stage = 3;
  hist.label = "stage3";
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = snapshot(params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t counted = 0;
    for (const auto& batch : make_batches(train_labels, plan.batch_size, plan.stratified, rng)) {
      const std::size_t this_step = step++;
      const auto labels = triple_labels(train_labels, batch);
      Var emb = siamese.forward(nn::constant(stack_triple(train_h, batch)), train_ctx);
      const auto res = ms_loss(emb, labels, config.ms);
      if (res.anchor_candidates == 0) {
        ++hist.skipped_batches;
        continue;
      }
      if (res.terms == 0) continue;
      epoch_loss += res.value->value.item();
      ++counted;
      adam.step(params, nn::backward(res.value), this_step);
    }
    hist.train_loss.push_back(counted == 0 ? 0.0 : epoch_loss / static_cast<double>(counted));
    const double v = data.val.empty() ? hist.train_loss.back() : val_loss();
    hist.val_loss.push_back(v);
    if (v < best) {
      best = v;
      best_params = snapshot(params);
      hist.best_epoch = epoch;
    }
    if (early_stop(hist.val_loss, plan.patience)) break;
  }
  restore(params, best_params);
  model.freeze(Subnet::siamese);
  model.set_stage(3);
  return hist;
}

StageHistory run_stage4(Model& model, const Dataset& data, const TrainConfig& config) {
  require_stage(model, 3, 4);
  auto hist = fit_regressor(model.net(Subnet::m2), model.net(Subnet::head_final), full_inputs(model, data.train),
                            data.train.traits(), full_inputs(model, data.val), data.val.traits(),
                            config.plan(4), config.bell, config.seed, "stage4");
  model.freeze(Subnet::m2);
  model.freeze(Subnet::head_final);
  model.set_stage(4);
  return hist;
}

}  // namespace xmodal
