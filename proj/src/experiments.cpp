#include "defgen/experiments.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

AblationAxis parse_axis(const std::string& name) {
  if (name == "pooling") return AblationAxis::pooling;
  if (name == "lambda") return AblationAxis::lambda;
  if (name == "batch-size") return AblationAxis::batch_size;
  if (name == "stages") return AblationAxis::stages;
  throw ConfigMismatch("unknown ablation axis: " + name);
}

std::string axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::pooling: return "pooling";
    case AblationAxis::lambda: return "lambda";
    case AblationAxis::batch_size: return "batch-size";
    case AblationAxis::stages: return "stages";
  }
  return "?";
}

namespace {

struct ArmOutcome {
  TrainResult result;
  int64_t stage1_epochs = 0;
};

void score_arm(AblationArm& arm, const ModelParams& params, const RunConfig& run,
               const std::vector<Entry>& test, const Vocab& vocab, const DecodeConfig& dcfg,
               PoolingKind pooling) {
  SplitEvaluation ev = evaluate_split(params, run.model, vocab, test, dcfg, run.target_segment);
  arm.bleu = ev.report.bleu;
  arm.bleu_x100 = ev.report.bleu_x100;
  arm.nist = ev.report.nist;
  arm.nist_x100_sentence_avg = ev.report.nist_x100_sentence_avg;
  AlignmentDiagnostics diag =
      split_alignment(params, run.model, vocab, test, pooling, run.target_segment);
  arm.diag_mean_sim = diag.diag_mean_sim;
  arm.retrieval_acc = diag.retrieval_accuracy;
  arm.ok = true;
}

}  // namespace

AblationReport run_ablation(AblationAxis axis, const RunConfig& base,
                            const std::vector<Entry>& train, const std::vector<Entry>& valid,
                            const std::vector<Entry>& test, const Vocab& vocab,
                            const DecodeConfig& dcfg, std::ostream* progress) {
  AblationReport report;
  report.axis = axis_name(axis);

  auto log = [&](const std::string& msg) {
    if (progress) *progress << "[ablate] " << msg << "\n";
  };

  // stage-1 checkpoint shared by stage-2-only arms
  std::optional<TrainResult> shared_stage1;
  auto ensure_stage1 = [&]() -> const TrainResult& {
    if (!shared_stage1) {
      log("training the shared stage-1 checkpoint");
      Rng init_rng(Rng::derive_seed(base.seed, "init"));
      ModelParams init = ModelParams::init(base.model, init_rng);
      shared_stage1 = train_stage(init, train, valid, vocab, base.stage1, base);
    }
    return *shared_stage1;
  };

  auto run_arm = [&](const std::string& name, auto&& body) {
    AblationArm arm;
    arm.name = name;
    log("arm " + name);
    try {
      body(arm);
    } catch (const std::exception& ex) {
      arm.ok = false;
      arm.error = ex.what();
      log("arm " + name + " failed: " + arm.error);
    }
    report.arms.push_back(std::move(arm));
  };

  switch (axis) {
    case AblationAxis::pooling: {
      for (PoolingKind pooling : {PoolingKind::max, PoolingKind::mean}) {
        run_arm("pooling=" + pooling_name(pooling), [&](AblationArm& arm) {
          const TrainResult& s1 = ensure_stage1();
          RunConfig run = base;
          StageConfig stage2 = base.stage2;
          stage2.pooling = pooling;
          auto s2 = train_stage(s1.params, train, valid, vocab, stage2, run);
          arm.stage1_epochs = static_cast<int64_t>(s1.epochs.size());
          arm.stage2_epochs = static_cast<int64_t>(s2.epochs.size());
          score_arm(arm, s2.params, run, test, vocab, dcfg, pooling);
        });
      }
      break;
    }
    case AblationAxis::lambda: {
      for (double lambda : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        std::ostringstream name;
        name << "lambda=" << std::fixed << std::setprecision(1) << lambda;
        run_arm(name.str(), [&](AblationArm& arm) {
          const TrainResult& s1 = ensure_stage1();
          StageConfig stage2 = base.stage2;
          stage2.lambda = lambda;
          auto s2 = train_stage(s1.params, train, valid, vocab, stage2, base);
          arm.stage1_epochs = static_cast<int64_t>(s1.epochs.size());
          arm.stage2_epochs = static_cast<int64_t>(s2.epochs.size());
          score_arm(arm, s2.params, base, test, vocab, dcfg,
                    stage2.pooling.value_or(PoolingKind::max));
        });
      }
      break;
    }
    case AblationAxis::batch_size: {
      for (int64_t bs : {8, 16, 32, 64}) {
        run_arm("batch-size=" + std::to_string(bs), [&](AblationArm& arm) {
          RunConfig run = base;
          run.batch_size = bs;
          Rng init_rng(Rng::derive_seed(run.seed, "init"));
          ModelParams init = ModelParams::init(run.model, init_rng);
          auto s1 = train_stage(init, train, valid, vocab, run.stage1, run);
          auto s2 = train_stage(s1.params, train, valid, vocab, run.stage2, run);
          arm.stage1_epochs = static_cast<int64_t>(s1.epochs.size());
          arm.stage2_epochs = static_cast<int64_t>(s2.epochs.size());
          score_arm(arm, s2.params, run, test, vocab, dcfg,
                    run.stage2.pooling.value_or(PoolingKind::max));
        });
      }
      break;
    }
    case AblationAxis::stages: {
      run_arm("stages=two", [&](AblationArm& arm) {
        const TrainResult& s1 = ensure_stage1();
        auto s2 = train_stage(s1.params, train, valid, vocab, base.stage2, base);
        arm.stage1_epochs = static_cast<int64_t>(s1.epochs.size());
        arm.stage2_epochs = static_cast<int64_t>(s2.epochs.size());
        score_arm(arm, s2.params, base, test, vocab, dcfg,
                  base.stage2.pooling.value_or(PoolingKind::max));
      });
      run_arm("stages=one", [&](AblationArm& arm) {
        auto res = train_one_stage(train, valid, vocab, base);
        arm.stage2_epochs = static_cast<int64_t>(res.epochs.size());
        score_arm(arm, res.params, base, test, vocab, dcfg,
                  base.stage2.pooling.value_or(PoolingKind::max));
      });
      break;
    }
  }
  return report;
}

std::string AblationReport::to_markdown() const {
  std::ostringstream md;
  md << "| " << axis << " | BLEU (x100) | NIST | NIST (x100 avg) | diag sim | retrieval |"
     << " epochs (s1+s2) | status |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const AblationArm& a : arms) {
    md << "| " << a.name << " | ";
    if (a.ok) {
      md << std::fixed << std::setprecision(2) << a.bleu_x100 << " | " << std::setprecision(3)
         << a.nist << " | " << std::setprecision(2) << a.nist_x100_sentence_avg << " | "
         << std::setprecision(3) << a.diag_mean_sim << " | " << std::setprecision(3)
         << a.retrieval_acc << " | " << a.stage1_epochs << "+" << a.stage2_epochs << " | ok |";
    } else {
      md << "- | - | - | - | - | - | FAILED: " << a.error << " |";
    }
    md << "\n";
  }
  return md.str();
}

std::string AblationReport::to_json(int indent) const {
  nlohmann::json j;
  j["axis"] = axis;
  j["arms"] = nlohmann::json::array();
  for (const AblationArm& a : arms) {
    nlohmann::json arm = {{"name", a.name}, {"ok", a.ok}};
    if (a.ok) {
      arm["bleu"] = a.bleu;
      arm["bleu_x100"] = a.bleu_x100;
      arm["nist"] = a.nist;
      arm["nist_x100_sentence_avg"] = a.nist_x100_sentence_avg;
      arm["diag_mean_sim"] = a.diag_mean_sim;
      arm["retrieval_acc"] = a.retrieval_acc;
      arm["stage1_epochs"] = a.stage1_epochs;
      arm["stage2_epochs"] = a.stage2_epochs;
    } else {
      arm["error"] = a.error;
    }
    j["arms"].push_back(arm);
  }
  return j.dump(indent);
}

// ---------------------------------------------------------------------------
// gradient checks
// ---------------------------------------------------------------------------

namespace {

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

Var weighted(Tape& t, Var x, uint64_t weight_seed) {
  Rng wrng(weight_seed);
  Tensor w = Tensor::zeros(t.value(x).shape);
  for (double& v : w.values) v = wrng.uniform(0.5, 1.5);
  return sum_all(t, mul_constant(t, x, w));
}

std::vector<Entry> micro_corpus() {
  std::vector<Entry> entries;
  for (int i = 0; i < 3; ++i) {
    Entry e;
    e.word_tokens = {"w" + std::to_string(i)};
    e.context_tokens = {"in", "the", "w" + std::to_string(i), "case"};
    e.definition_tokens = {"thing", "number", std::to_string(i)};
    e.span_begin = 2;
    e.span_end = 3;
    entries.push_back(e);
  }
  return entries;
}

}  // namespace

GradCheckReport run_gradient_checks(double per_op_tolerance, double full_loss_tolerance,
                                    int full_loss_coords, uint64_t seed,
                                    const ModelConfig* model_override) {
  GradCheckReport report;
  Rng rng(seed);

  auto check = [&](const std::string& name, const LossFn& f, std::vector<Tensor> params,
                   double tol, int coords = 0, double eps = 1e-5) {
    GradCheckItem item;
    item.name = name;
    item.tolerance = tol;
    const FdReport fd = finite_diff_check(f, params, eps, coords, rng.next_u64());
    item.max_rel_err = fd.max_rel_err;
    item.coords = fd.coords_checked;
    item.pass = fd.max_rel_err <= tol;
    report.all_pass = report.all_pass && item.pass;
    report.items.push_back(item);
  };
  const double tol = per_op_tolerance;

  check("add+mul+scale+axpby",
        [](Tape& t, const std::vector<Var>& p) {
          return sum_all(t, axpby(t, 0.4, mul(t, add(t, p[0], p[1]), p[0]), -1.3,
                                  scale(t, p[1], 2.0)));
        },
        {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)}, tol);
  {
    Rng crng(seed + 1);
    Tensor c = rand_tensor({3, 4}, crng);
    Tensor m = rand_tensor({3, 4}, crng);
    check("add_constant+mul_constant",
          [c, m](Tape& t, const std::vector<Var>& p) {
            return sum_all(t, mul_constant(t, add_constant(t, p[0], c), m));
          },
          {rand_tensor({3, 4}, rng)}, tol);
  }
  const uint64_t wseed = rng.next_u64();
  check("add_bias",
        [wseed](Tape& t, const std::vector<Var>& p) {
          return weighted(t, add_bias(t, p[0], p[1]), wseed);
        },
        {rand_tensor({4, 5}, rng), rand_tensor({1, 5}, rng)}, tol);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      check("matmul(trans_a=" + std::to_string(ta) + ",trans_b=" + std::to_string(tb) + ")",
            [ta, tb, wseed](Tape& t, const std::vector<Var>& p) {
              return weighted(t, matmul(t, p[0], p[1], ta, tb), wseed);
            },
            {ta ? rand_tensor({4, 3}, rng) : rand_tensor({3, 4}, rng),
             tb ? rand_tensor({2, 4}, rng) : rand_tensor({4, 2}, rng)},
            tol);
    }
  }
  {
    std::vector<int> ids = {2, 0, 4, 2};
    check("embedding",
          [ids, wseed](Tape& t, const std::vector<Var>& p) {
            return weighted(t, embedding(t, p[0], ids), wseed);
          },
          {rand_tensor({5, 4}, rng)}, tol);
  }
  check("layer_norm",
        [wseed](Tape& t, const std::vector<Var>& p) {
          return weighted(t, layer_norm(t, p[0], p[1], p[2]), wseed);
        },
        {rand_tensor({4, 6}, rng), rand_tensor({1, 6}, rng, 0.5, 1.5), rand_tensor({1, 6}, rng)},
        tol);
  check("gelu",
        [wseed](Tape& t, const std::vector<Var>& p) { return weighted(t, gelu(t, p[0]), wseed); },
        {rand_tensor({3, 5}, rng, -2.0, 2.0)}, tol);
  check("softmax_rows",
        [wseed](Tape& t, const std::vector<Var>& p) {
          return weighted(t, softmax_rows(t, p[0]), wseed);
        },
        {rand_tensor({3, 5}, rng)}, tol);
  {
    std::vector<uint8_t> keep = {1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0};
    check("masked_softmax_rows",
          [keep, wseed](Tape& t, const std::vector<Var>& p) {
            return weighted(t, masked_softmax_rows(t, p[0], keep), wseed);
          },
          {rand_tensor({3, 5}, rng)}, tol);
  }
  {
    std::vector<int> gold = {1, 4, 0, 3};
    std::vector<uint8_t> include = {1, 1, 0, 1};
    for (Reduction red : {Reduction::mean, Reduction::sum}) {
      check(std::string("cross_entropy_rows(") +
                (red == Reduction::mean ? "mean" : "sum") + ")",
            [gold, include, red](Tape& t, const std::vector<Var>& p) {
              return cross_entropy_rows(t, p[0], gold, include, red);
            },
            {rand_tensor({4, 5}, rng)}, tol);
    }
  }
  check("slice+concat rows/cols",
        [wseed](Tape& t, const std::vector<Var>& p) {
          Var stacked = concat_rows(t, {slice_rows(t, p[0], 2, 4), slice_rows(t, p[0], 0, 2)});
          Var swapped = concat_cols(t, {slice_cols(t, stacked, 3, 6), slice_cols(t, stacked, 0, 3)});
          return weighted(t, swapped, wseed);
        },
        {rand_tensor({4, 6}, rng)}, tol);
  check("rows_l2_normalize",
        [wseed](Tape& t, const std::vector<Var>& p) {
          return weighted(t, rows_l2_normalize(t, p[0]), wseed);
        },
        {rand_tensor({4, 5}, rng, 0.2, 1.2)}, tol);
  {
    std::vector<uint8_t> include = {1, 0, 1, 1};
    check("max_pool_rows",
          [include, wseed](Tape& t, const std::vector<Var>& p) {
            return weighted(t, max_pool_rows(t, p[0], include), wseed);
          },
          {rand_tensor({4, 5}, rng)}, tol);
    check("mean_pool_rows",
          [include, wseed](Tape& t, const std::vector<Var>& p) {
            return weighted(t, mean_pool_rows(t, p[0], include), wseed);
          },
          {rand_tensor({4, 5}, rng)}, tol);
  }
  check("cosine_sim",
        [](Tape& t, const std::vector<Var>& p) { return cosine_sim(t, p[0], p[1]); },
        {rand_tensor({6}, rng, 0.2, 1.0), rand_tensor({6}, rng, -1.0, -0.2)}, tol);
  for (Reduction red : {Reduction::mean, Reduction::sum}) {
    check(std::string("contrastive_loss(") + (red == Reduction::mean ? "mean" : "sum") + ")",
          [red](Tape& t, const std::vector<Var>& p) {
            return contrastive_loss(t, p[0], p[1], 0.3, red);
          },
          {rand_tensor({4, 5}, rng), rand_tensor({4, 5}, rng)}, tol);
  }

  // full mixed loss through the toy model
  {
    auto entries = micro_corpus();
    Vocab vocab = build_vocab(entries, 1);
    ModelConfig cfg;
    if (model_override) {
      cfg = *model_override;
    } else {
      cfg.n_encoder_layers = 1;
      cfg.n_decoder_layers = 1;
      cfg.d_model = 8;
      cfg.n_heads = 2;
      cfg.d_ff = 16;
      cfg.max_len = 16;
    }
    cfg.vocab_size = vocab.size();
    auto batches = make_batches(entries, vocab, 3, std::nullopt);
    Rng init_rng(seed + 2);
    ModelParams params = ModelParams::init(cfg, init_rng);
    ContrastiveConfig ccfg;
    ccfg.tau = 0.5;

    std::vector<std::string> names;
    std::vector<Tensor> values;
    for (const auto& [name, tensor] : params.tensors) {
      names.push_back(name);
      values.push_back(tensor);
    }
    auto f = [&](Tape& t, const std::vector<Var>& vars) {
      ParamHandles p;
      for (size_t i = 0; i < names.size(); ++i) p.vars[names[i]] = vars[i];
      return batch_loss(t, p, cfg, batches[0], 0.8, ccfg).loss;
    };
    check("full_mixed_loss", f, values, full_loss_tolerance, full_loss_coords, 1e-4);
  }
  return report;
}

}  // namespace defgen
