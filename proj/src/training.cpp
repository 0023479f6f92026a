#include "defgen/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "defgen/serialize.hpp"
#include "json.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::init(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, t] : params.tensors) {
    s.m[name] = Tensor::zeros(t.shape);
    s.v[name] = Tensor::zeros(t.shape);
  }
  return s;
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.values) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.values) v *= s;
    }
  }
  return norm;
}

void adam_step(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw NonFiniteGradient("adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (!g.same_shape(p)) throw ShapeMismatch("adam_step: gradient shape mismatch for " + name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (size_t i = 0; i < p.values.size(); ++i) {
      const double gi = g.values[i];
      if (!std::isfinite(gi)) throw NonFiniteGradient("adam_step: non-finite gradient in " + name);
      m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * gi;
      v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.values[i] / bc1;
      const double vhat = v.values[i] / bc2;
      p.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// stage configs
// ---------------------------------------------------------------------------

void StageConfig::validate() const {
  if (stage == StageKind::one) {
    if (lambda != 0.0) throw ConfigMismatch("stage one requires lambda = 0");
    if (pooling.has_value()) throw ConfigMismatch("stage one requires pooling = none");
  } else {
    if (!pooling.has_value()) throw ConfigMismatch("stage two requires a pooling kind");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw LambdaOutOfRange("stage lambda out of [0, 1]");
  if (max_epoch < 1) throw ConfigMismatch("max_epoch must be >= 1");
  if (early_stop_patience < 0 || early_stop_patience > max_epoch) {
    throw ConfigMismatch("patience must lie in [0, max_epoch]");
  }
}

StageConfig stage_preset(const std::string& dataset, int stage) {
  StageConfig c;
  if (stage == 1) {
    c.stage = StageKind::one;
    if (dataset == "wordnet") {
      c.max_epoch = 140;
      c.early_stop_patience = 40;
    } else if (dataset == "oxford") {
      c.max_epoch = 50;
      c.early_stop_patience = 10;
    } else if (dataset == "urban") {
      c.max_epoch = 30;
      c.early_stop_patience = 5;
    } else {
      throw ConfigMismatch("unknown stage preset dataset: " + dataset);
    }
  } else if (stage == 2) {
    c.stage = StageKind::two;
    c.pooling = PoolingKind::max;
    c.lambda = 0.8;
    if (dataset == "wordnet") {
      c.max_epoch = 70;
      c.early_stop_patience = 40;
    } else if (dataset == "oxford") {
      c.max_epoch = 50;
      c.early_stop_patience = 10;
    } else if (dataset == "urban") {
      c.max_epoch = 15;
      c.early_stop_patience = 5;
    } else {
      throw ConfigMismatch("unknown stage preset dataset: " + dataset);
    }
  } else {
    throw ConfigMismatch("stage preset must be 1 or 2");
  }
  return c;
}

// ---------------------------------------------------------------------------
// run config JSON
// ---------------------------------------------------------------------------

namespace {

nlohmann::json stage_to_json(const StageConfig& s) {
  nlohmann::json j = {{"stage", s.stage == StageKind::one ? 1 : 2},
                      {"max_epoch", s.max_epoch},
                      {"early_stop_patience", s.early_stop_patience},
                      {"pooling", s.pooling ? pooling_name(*s.pooling) : "none"},
                      {"lambda", s.lambda}};
  return j;
}

StageConfig stage_from_json(const nlohmann::json& j) {
  StageConfig s;
  s.stage = j.at("stage").get<int>() == 1 ? StageKind::one : StageKind::two;
  s.max_epoch = j.at("max_epoch").get<int64_t>();
  s.early_stop_patience = j.at("early_stop_patience").get<int64_t>();
  const std::string pool = j.at("pooling").get<std::string>();
  if (pool != "none") s.pooling = parse_pooling(pool);
  s.lambda = j.at("lambda").get<double>();
  return s;
}

}  // namespace

std::string RunConfig::to_json(int indent) const {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["contrastive"] = {{"tau", contrastive.tau},
                      {"pooling", pooling_name(contrastive.pooling)},
                      {"reduction", contrastive.reduction == Reduction::mean ? "mean" : "sum"}};
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},
                    {"clip_norm", optimizer.clip_norm}};
  j["stage1"] = stage_to_json(stage1);
  j["stage2"] = stage_to_json(stage2);
  j["train"] = {{"batch_size", batch_size},
                {"seed", seed},
                {"monitor", monitor},
                {"reset_moments_stage2", reset_moments_stage2},
                {"target_segment", target_segment == TargetSegment::context ? "context" : "word"}};
  j["data"] = {{"dir", data_dir},
               {"format", data_format},
               {"min_freq", min_freq},
               {"max_vocab", max_vocab}};
  return indent >= 0 ? j.dump(indent) : j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigMismatch(std::string("invalid run config JSON: ") + ex.what());
  }
  RunConfig c;
  try {
    c.model = ModelConfig::from_json(j.at("model").dump());
    const auto& cc = j.at("contrastive");
    c.contrastive.tau = cc.at("tau").get<double>();
    c.contrastive.pooling = parse_pooling(cc.at("pooling").get<std::string>());
    c.contrastive.reduction =
        cc.at("reduction").get<std::string>() == "sum" ? Reduction::sum : Reduction::mean;
    const auto& oc = j.at("optimizer");
    c.optimizer.lr = oc.at("lr").get<double>();
    c.optimizer.beta1 = oc.at("beta1").get<double>();
    c.optimizer.beta2 = oc.at("beta2").get<double>();
    c.optimizer.eps = oc.at("eps").get<double>();
    c.optimizer.clip_norm = oc.at("clip_norm").get<double>();
    c.stage1 = stage_from_json(j.at("stage1"));
    c.stage2 = stage_from_json(j.at("stage2"));
    const auto& tc = j.at("train");
    c.batch_size = tc.at("batch_size").get<int64_t>();
    c.seed = tc.at("seed").get<uint64_t>();
    c.monitor = tc.at("monitor").get<std::string>();
    c.reset_moments_stage2 = tc.at("reset_moments_stage2").get<bool>();
    c.target_segment = tc.at("target_segment").get<std::string>() == "word"
                           ? TargetSegment::word
                           : TargetSegment::context;
    const auto& dc = j.at("data");
    c.data_dir = dc.at("dir").get<std::string>();
    c.data_format = dc.at("format").get<std::string>();
    c.min_freq = dc.at("min_freq").get<int64_t>();
    c.max_vocab = dc.at("max_vocab").get<int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigMismatch(std::string("run config missing field: ") + ex.what());
  }
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

uint64_t RunConfig::config_hash() const {
  const std::string canon = to_json();
  return fnv1a(canon.data(), canon.size());
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

double validation_loss(const ModelParams& params, const std::vector<Entry>& entries,
                       const Vocab& vocab, const StageConfig& stage, const RunConfig& run) {
  if (entries.empty()) throw EmptyCorpus("validation_loss: no entries");
  ContrastiveConfig ccfg = run.contrastive;
  if (stage.pooling) ccfg.pooling = *stage.pooling;
  auto batches = make_batches(entries, vocab, run.batch_size, std::nullopt, run.target_segment);
  double total = 0.0;
  int64_t samples = 0;
  for (const Batch& b : batches) {
    Tape t;
    ParamHandles p = lift_params(t, params);
    auto res = batch_loss(t, p, run.model, b, stage.lambda, ccfg);
    total += res.bundle.l_final * static_cast<double>(b.n);
    samples += b.n;
  }
  return total / static_cast<double>(samples);
}

TrainResult train_stage(const ModelParams& init_params, const std::vector<Entry>& train_entries,
                        const std::vector<Entry>& valid_entries, const Vocab& vocab,
                        const StageConfig& stage, const RunConfig& run, const ValidScorer* scorer,
                        const EpochCallback& on_epoch, const AdamState* carried_moments) {
  stage.validate();
  run.model.validate();
  run.contrastive.validate();
  if (train_entries.empty()) throw EmptyCorpus("train_stage: empty training split");
  if (valid_entries.empty()) throw EmptyCorpus("train_stage: empty validation split");

  ContrastiveConfig ccfg = run.contrastive;
  if (stage.pooling) ccfg.pooling = *stage.pooling;

  TrainResult result;
  result.state.master_seed = run.seed;
  result.state.opt = carried_moments ? *carried_moments : AdamState::init(init_params);

  ModelParams params = init_params;
  ModelParams best_params = params;
  const bool higher_better = scorer ? scorer->higher_is_better : false;
  double best = higher_better ? -HUGE_VAL : HUGE_VAL;
  int64_t best_epoch = -1;
  int64_t since_improved = 0;
  int64_t global_step = 0;

  for (int64_t epoch = 0; epoch < stage.max_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // label excludes the stage kind: a lambda=0 stage-two run must draw the
    // exact shuffles of generation-only training
    const uint64_t shuffle_seed =
        Rng::derive_seed(run.seed, "shuffle/epoch/" + std::to_string(epoch));
    auto batches = make_batches(train_entries, vocab, run.batch_size, shuffle_seed,
                                run.target_segment);
    Rng dropout_rng(Rng::derive_seed(run.seed, "dropout/epoch/" + std::to_string(epoch)));

    double epoch_lg = 0.0, epoch_lc = 0.0;
    int64_t epoch_samples = 0;
    for (const Batch& b : batches) {
      try {
        Tape t;
        ParamHandles p = lift_params(t, params);
        DropoutState ds{&dropout_rng, run.model.dropout > 0.0};
        const bool want_diag = stage.lambda > 0.0;
        auto res = batch_loss(t, p, run.model, b, stage.lambda, ccfg, want_diag, ds);
        t.backward(res.loss);
        auto grads = read_grads(t, p);
        clip_global_norm(grads, run.optimizer.clip_norm);
        adam_step(params, grads, result.state.opt, run.optimizer);

        epoch_lg += res.bundle.l_g * static_cast<double>(b.n);
        epoch_lc += res.bundle.l_c * static_cast<double>(b.n);
        epoch_samples += b.n;
        StepLog sl;
        sl.step = global_step++;
        sl.l_g = res.bundle.l_g;
        sl.l_c = res.bundle.l_c;
        sl.l_final = res.bundle.l_final;
        sl.diag_mean_sim = res.bundle.diag.diag_mean_sim;
        sl.offdiag_mean_sim = res.bundle.diag.offdiag_mean_sim;
        sl.retrieval_acc = res.bundle.diag.retrieval_accuracy;
        result.steps.push_back(sl);
      } catch (const NonFiniteValue& ex) {
        throw DivergedLoss(std::string("training diverged: ") + ex.what());
      } catch (const NonFiniteGradient& ex) {
        throw DivergedLoss(std::string("training diverged: ") + ex.what());
      }
    }

    const double score = scorer && scorer->fn
                             ? scorer->fn(params)
                             : validation_loss(params, valid_entries, vocab, stage, run);
    const bool improved = higher_better ? score > best : score < best;
    if (improved) {
      best = score;
      best_epoch = epoch;
      best_params = params;
      since_improved = 0;
    } else {
      ++since_improved;
    }

    EpochLog el;
    el.epoch = epoch;
    el.train_l_g = epoch_lg / static_cast<double>(epoch_samples);
    el.train_l_c = epoch_lc / static_cast<double>(epoch_samples);
    el.valid_score = score;
    el.lr = run.optimizer.lr;
    el.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    el.improved = improved;
    result.epochs.push_back(el);

    result.state.epoch = epoch + 1;
    result.state.best_score = best;
    result.state.epochs_since_improvement = since_improved;
    if (on_epoch) on_epoch(epoch, params);
    if (since_improved > stage.early_stop_patience) break;
  }

  result.params = std::move(best_params);
  result.best_epoch = best_epoch;
  result.best_score = best;
  return result;
}

TrainResult train_one_stage(const std::vector<Entry>& train_entries,
                            const std::vector<Entry>& valid_entries, const Vocab& vocab,
                            const RunConfig& run, const ValidScorer* scorer) {
  Rng init_rng(Rng::derive_seed(run.seed, "init"));
  ModelParams params = ModelParams::init(run.model, init_rng);
  StageConfig combined = run.stage2;
  combined.stage = StageKind::two;
  return train_stage(params, train_entries, valid_entries, vocab, combined, run, scorer);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json meta;
  meta["model_config"] = nlohmann::json::parse(ckpt.model_config.to_json());
  meta["stage_config"] = stage_to_json(ckpt.stage_config);
  meta["train_state"] = {{"epoch", ckpt.state.epoch},
                         {"best_score", ckpt.state.best_score},
                         {"epochs_since_improvement", ckpt.state.epochs_since_improvement},
                         {"opt_step", ckpt.state.opt.step},
                         {"master_seed", ckpt.state.master_seed}};
  meta["vocab"] = ckpt.vocab_tokens;
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, t] : ckpt.params.tensors) tensors["param." + name] = t;
  for (const auto& [name, t] : ckpt.state.opt.m) tensors["adam_m." + name] = t;
  for (const auto& [name, t] : ckpt.state.opt.v) tensors["adam_v." + name] = t;
  write_named_tensors_file(path, meta.dump(), tensors);
}

Checkpoint checkpoint_load(const std::string& path, const ModelConfig* expect_model) {
  NamedTensorFile file = read_named_tensors_file(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(file.meta_json);
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint("checkpoint metadata is not valid JSON: " + path);
  }
  Checkpoint ckpt;
  ckpt.model_config = ModelConfig::from_json(meta.at("model_config").dump());
  ckpt.stage_config = stage_from_json(meta.at("stage_config"));
  const auto& ts = meta.at("train_state");
  ckpt.state.epoch = ts.at("epoch").get<int64_t>();
  ckpt.state.best_score = ts.at("best_score").get<double>();
  ckpt.state.epochs_since_improvement = ts.at("epochs_since_improvement").get<int64_t>();
  ckpt.state.opt.step = ts.at("opt_step").get<int64_t>();
  ckpt.state.master_seed = ts.at("master_seed").get<uint64_t>();
  if (meta.contains("vocab")) {
    ckpt.vocab_tokens = meta.at("vocab").get<std::vector<std::string>>();
  }

  for (const auto& [name, t] : file.tensors) {
    if (name.rfind("param.", 0) == 0) {
      ckpt.params.tensors[name.substr(6)] = t;
    } else if (name.rfind("adam_m.", 0) == 0) {
      ckpt.state.opt.m[name.substr(7)] = t;
    } else if (name.rfind("adam_v.", 0) == 0) {
      ckpt.state.opt.v[name.substr(7)] = t;
    } else {
      throw CorruptCheckpoint("unexpected tensor in checkpoint: " + name);
    }
  }
  if (expect_model && !(ckpt.model_config == *expect_model)) {
    throw ConfigMismatch("checkpoint model config does not match the requested config: " + path);
  }
  return ckpt;
}

}  // namespace defgen
