#include <cstdio>
#include <filesystem>
#include <fstream>

#include "defgen/decode.hpp"
#include "defgen/demo.hpp"
#include "defgen/training.hpp"
#include "doctest.h"
#include "test_corpus.hpp"

using namespace defgen;
using testutil::small_corpus;
using testutil::small_run_config;

namespace {

struct TrainedToy {
  std::vector<Entry> entries;
  Vocab vocab;
  RunConfig run;
  ModelParams params;
};

// Overfits a small corpus far enough to memorize it; shared across cases.
const TrainedToy& overfit_toy() {
  static const TrainedToy toy = [] {
    TrainedToy t{small_corpus(8), Vocab(), RunConfig{}, ModelParams{}};
    t.vocab = build_vocab(t.entries, 1);
    t.run = small_run_config(t.vocab, 17);
    t.run.model.d_model = 32;
    t.run.model.d_ff = 64;
    t.run.stage1.max_epoch = 300;
    t.run.stage1.early_stop_patience = 300;
    Rng init_rng(Rng::derive_seed(t.run.seed, "init"));
    ModelParams init = ModelParams::init(t.run.model, init_rng);
    auto res = train_stage(init, t.entries, t.entries, t.vocab, t.run.stage1, t.run);
    t.params = res.params;
    return t;
  }();
  return toy;
}

}  // namespace

TEST_CASE("decode config validation") {
  DecodeConfig bad;
  bad.beam_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigMismatch);
  DecodeConfig mixed;
  mixed.strategy = DecodeConfig::Strategy::greedy;
  mixed.beam_size = 3;
  CHECK_THROWS_AS(mixed.validate(), ConfigMismatch);
}

TEST_CASE("an overfit model reproduces its training definitions") {
  const TrainedToy& toy = overfit_toy();
  DecodeConfig greedy;
  int exact = 0;
  for (const Entry& e : toy.entries) {
    GenerationResult gen = generate(toy.params, toy.run.model, toy.vocab, e, greedy);
    if (toy.vocab.decode(gen.ids) == e.definition_tokens) ++exact;
  }
  CHECK(exact == static_cast<int>(toy.entries.size()));
}

TEST_CASE("evaluate_split on the training split of an overfit model") {
  const TrainedToy& toy = overfit_toy();
  const std::string tsv =
      (std::filesystem::temp_directory_path() / "defgen_eval.tsv").string();
  DecodeConfig greedy;
  SplitEvaluation ev =
      evaluate_split(toy.params, toy.run.model, toy.vocab, toy.entries, greedy,
                     TargetSegment::context, tsv);
  CHECK(ev.report.bleu >= 0.95);
  CHECK(ev.generations.size() == toy.entries.size());

  std::ifstream in(tsv);
  REQUIRE(in.good());
  std::string line;
  int64_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 4);
  }
  CHECK(lines == static_cast<int64_t>(toy.entries.size()));
  std::remove(tsv.c_str());
}

TEST_CASE("an untrained model scores near zero BLEU") {
  auto entries = small_corpus(8);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = small_run_config(vocab, 999);
  Rng rng(31337);
  ModelParams params = ModelParams::init(run.model, rng);
  DecodeConfig greedy;
  SplitEvaluation ev = evaluate_split(params, run.model, vocab, entries, greedy);
  CHECK(ev.report.bleu <= 0.05);
}

TEST_CASE("beam_size=1 equals greedy token for token") {
  auto entries = small_corpus(10);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = small_run_config(vocab, 5);
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Rng rng(seed);
    ModelParams params = ModelParams::init(run.model, rng);
    DecodeConfig greedy;
    DecodeConfig beam1;
    beam1.strategy = DecodeConfig::Strategy::beam;
    beam1.beam_size = 1;
    for (const Entry& e : entries) {
      GenerationResult a = generate(params, run.model, vocab, e, greedy);
      GenerationResult b = generate(params, run.model, vocab, e, beam1);
      CHECK(a.ids == b.ids);
    }
  }
}

TEST_CASE("wider beams never score worse than greedy") {
  const TrainedToy& toy = overfit_toy();
  DecodeConfig greedy;
  DecodeConfig beam;
  beam.strategy = DecodeConfig::Strategy::beam;
  beam.beam_size = 4;
  for (const Entry& e : toy.entries) {
    GenerationResult g = generate(toy.params, toy.run.model, toy.vocab, e, greedy);
    GenerationResult b = generate(toy.params, toy.run.model, toy.vocab, e, beam);
    CHECK(b.logprob >= g.logprob - 1e-9);
  }
}

TEST_CASE("a forced EOS spike stops decoding immediately") {
  auto entries = small_corpus(4);
  Vocab vocab = build_vocab(entries, 1);
  RunConfig run = small_run_config(vocab, 77);
  Rng rng(77);
  ModelParams params = ModelParams::init(run.model, rng);
  // zero the final decoder norm gain: G rows collapse to the norm bias, so
  // logits become bias . emb_v; an EOS-only embedding then always wins
  for (double& v : params.tensors.at("dec.final_ln.gain").values) v = 0.0;
  for (double& v : params.tensors.at("dec.final_ln.bias").values) v = 1.0;
  for (auto& v : params.tensors.at("embedding").values) v = 0.0;
  for (int64_t c = 0; c < run.model.d_model; ++c) {
    params.tensors.at("embedding").at(Vocab::kEos, c) = 1.0;
  }
  DecodeConfig greedy;
  GenerationResult gen = generate(params, run.model, vocab, entries[0], greedy);
  CHECK(gen.ids.empty());
  CHECK(!gen.truncated);
}

TEST_CASE("max_decode_len truncation is recorded, not an error") {
  const TrainedToy& toy = overfit_toy();
  DecodeConfig capped;
  capped.max_decode_len = 2;
  GenerationResult gen = generate(toy.params, toy.run.model, toy.vocab, toy.entries[0], capped);
  CHECK(gen.ids.size() <= 2);
  CHECK(gen.truncated);
}

TEST_CASE("evaluate_split refuses an empty split") {
  const TrainedToy& toy = overfit_toy();
  DecodeConfig greedy;
  CHECK_THROWS_AS(evaluate_split(toy.params, toy.run.model, toy.vocab, {}, greedy),
                  EmptyHypothesisSet);
}

TEST_CASE("split alignment diagnostics are well-formed") {
  const TrainedToy& toy = overfit_toy();
  AlignmentDiagnostics d = split_alignment(toy.params, toy.run.model, toy.vocab, toy.entries,
                                           PoolingKind::max);
  CHECK(d.diag_mean_sim >= -1.0);
  CHECK(d.diag_mean_sim <= 1.0);
  CHECK(d.retrieval_accuracy >= 0.0);
  CHECK(d.retrieval_accuracy <= 1.0);
  CHECK(d.duplicate_rate == 0.0);
}

TEST_CASE("demo corpus is well-formed and deterministic") {
  auto a = make_demo_entries(50, 2024);
  auto b = make_demo_entries(50, 2024);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i].validate();
    CHECK(a[i].word_tokens == b[i].word_tokens);
    CHECK(a[i].definition_tokens == b[i].definition_tokens);
  }
  // definitions are pairwise distinct, targets are pairwise distinct
  std::vector<std::vector<std::string>> defs, words;
  for (const Entry& e : a) {
    defs.push_back(e.definition_tokens);
    words.push_back(e.word_tokens);
  }
  std::sort(defs.begin(), defs.end());
  std::sort(words.begin(), words.end());
  CHECK(std::adjacent_find(defs.begin(), defs.end()) == defs.end());
  CHECK(std::adjacent_find(words.begin(), words.end()) == words.end());
  // a different seed reassigns definitions
  auto c = make_demo_entries(50, 7);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].definition_tokens != c[i].definition_tokens) any_diff = true;
  }
  CHECK(any_diff);

  const std::string dir = (std::filesystem::temp_directory_path() / "defgen_demo").string();
  write_demo_corpus(dir, 50, 2024);
  auto loaded = load_dataset(dir + "/train.tsv", DataFormat::tsv);
  CHECK(loaded.entries.size() == 50);
  CHECK(loaded.entries[0].definition_tokens == a[0].definition_tokens);
  std::filesystem::remove_all(dir);
}
