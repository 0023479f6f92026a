#include <string>

#include "defgen/decode.hpp"
#include "defgen/experiments.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_corpus.hpp"

using namespace defgen;
using testutil::small_corpus;
using testutil::small_run_config;

namespace {

RunConfig fast_config(const Vocab& vocab, uint64_t seed) {
  RunConfig run = small_run_config(vocab, seed);
  run.stage1.max_epoch = 4;
  run.stage1.early_stop_patience = 4;
  run.stage2.max_epoch = 3;
  run.stage2.early_stop_patience = 3;
  return run;
}

}  // namespace

TEST_CASE("axis parsing round-trips") {
  for (const char* name : {"pooling", "lambda", "batch-size", "stages"}) {
    CHECK(axis_name(parse_axis(name)) == name);
  }
  CHECK_THROWS_AS(parse_axis("dropout"), ConfigMismatch);
}

TEST_CASE("lambda axis: structure, and the 0.0 arm equals stage-1-continued training") {
  auto entries = small_corpus(8);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = fast_config(vocab, 21);
  DecodeConfig greedy;

  AblationReport rep =
      run_ablation(AblationAxis::lambda, run, entries, entries, entries, vocab, greedy);
  REQUIRE(rep.arms.size() == 6);
  CHECK(rep.arms[0].name == "lambda=0.0");
  CHECK(rep.arms[5].name == "lambda=1.0");
  for (const AblationArm& arm : rep.arms) CHECK(arm.ok);

  // plain continued generation-only training from the same shared stage-1
  Rng init_rng(Rng::derive_seed(run.seed, "init"));
  ModelParams init = ModelParams::init(run.model, init_rng);
  auto s1 = train_stage(init, entries, entries, vocab, run.stage1, run);
  StageConfig continued = run.stage2;
  continued.lambda = 0.0;
  auto s2 = train_stage(s1.params, entries, entries, vocab, continued, run);
  SplitEvaluation ev = evaluate_split(s2.params, run.model, vocab, entries, greedy);
  CHECK(rep.arms[0].bleu == ev.report.bleu);
  CHECK(rep.arms[0].nist == ev.report.nist);

  // table formats
  const std::string md = rep.to_markdown();
  CHECK(md.find("lambda=0.8") != std::string::npos);
  auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("axis") == "lambda");
  CHECK(j.at("arms").size() == 6);
}

TEST_CASE("failed arms are marked and the sweep continues") {
  auto entries = small_corpus(8);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = fast_config(vocab, 22);
  run.model.vocab_size = Vocab::kNumSpecials;  // real token ids overflow the embedding
  DecodeConfig greedy;
  AblationReport rep =
      run_ablation(AblationAxis::pooling, run, entries, entries, entries, vocab, greedy);
  REQUIRE(rep.arms.size() == 2);
  for (const AblationArm& arm : rep.arms) {
    CHECK(!arm.ok);
    CHECK(!arm.error.empty());
  }
  CHECK(rep.to_markdown().find("FAILED") != std::string::npos);
}

TEST_CASE("batch-size and stages axes cover the documented arms") {
  auto entries = small_corpus(8);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = fast_config(vocab, 23);
  DecodeConfig greedy;

  AblationReport bs =
      run_ablation(AblationAxis::batch_size, run, entries, entries, entries, vocab, greedy);
  REQUIRE(bs.arms.size() == 4);
  CHECK(bs.arms[0].name == "batch-size=8");
  CHECK(bs.arms[3].name == "batch-size=64");

  AblationReport st =
      run_ablation(AblationAxis::stages, run, entries, entries, entries, vocab, greedy);
  REQUIRE(st.arms.size() == 2);
  CHECK(st.arms[0].name == "stages=two");
  CHECK(st.arms[1].name == "stages=one");
  CHECK(st.arms[1].stage1_epochs == 0);  // one-stage trains from scratch
}

TEST_CASE("gradient-check harness reports per-op items and detects corruption") {
  GradCheckReport rep = run_gradient_checks(1e-6, 1e-4, 40, 5);
  CHECK(rep.all_pass);
  CHECK(rep.items.size() >= 20);
  bool saw_full = false;
  for (const auto& item : rep.items) {
    if (item.name == "full_mixed_loss") saw_full = true;
  }
  CHECK(saw_full);

  debug::corrupt_matmul_backward = true;
  GradCheckReport bad = run_gradient_checks(1e-6, 1e-4, 40, 5);
  debug::corrupt_matmul_backward = false;
  CHECK(!bad.all_pass);
}
