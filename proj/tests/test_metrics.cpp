#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bleu_oracle.hpp"
#include "defgen/metrics.hpp"
#include "defgen/rng.hpp"
#include "doctest.h"

using namespace defgen;
using testutil::OracleCounts;
using testutil::oracle_clipped;
using testutil::oracle_corpus_bleu;

namespace {

TokenSeq toks(const std::string& text) {
  TokenSeq out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// The fixed 5-pair vignette; expected values frozen from the reference
// implementation (tests/oracles/nist_reference.py).
const std::vector<std::pair<std::string, std::string>> kVignette = {
    {"a small round fruit of the orchard", "a small round fruit of the orchard"},
    {"a large wild animal of the forest", "a large fierce animal of the woods"},
    {"the act of moving quickly on foot", "the act of running fast on foot"},
    {"a tool used for cutting wood", "a sharp tool for cutting wood or metal"},
    {"music played at night", "a piece of music performed in the evening"},
};
constexpr double kVignetteCorpusNist = 3.257116679389;
constexpr double kPair0Nist = 2.807354922058;  // log2(7): seven once-occurring unigrams
constexpr double kPair1Nist = 2.005253515755;
constexpr double kPair3Nist = 1.763598093328;

}  // namespace

TEST_CASE("BLEU of identical corpora is exactly 1") {
  std::vector<TokenSeq> sents = {toks("twice as great or many"),
                                 toks("an expression of approval and commendation")};
  MetricReport r = bleu_corpus(sents, sents);
  CHECK(r.bleu == 1.0);
  CHECK(r.brevity_penalty == 1.0);
  for (double p : r.bleu_precisions) CHECK(p == 1.0);
}

TEST_CASE("clipped precision: the repeated-token vignette") {
  const TokenSeq hyp = toks("the the the the");
  const TokenSeq ref = toks("the cat");
  const NgramPrecision p1 = clipped_ngram_precision(hyp, ref, 1);
  CHECK(p1.matches == 1);  // clipped at the reference count of "the"
  CHECK(p1.total == 4);
  const NgramPrecision p2 = clipped_ngram_precision(hyp, ref, 2);
  CHECK(p2.matches == 0);
  CHECK(p2.total == 3);

  // cross-check the library against the brute-force oracle
  for (int n = 1; n <= 2; ++n) {
    const NgramPrecision lib = clipped_ngram_precision(hyp, ref, n);
    const OracleCounts oc = oracle_clipped(hyp, ref, n);
    CHECK(lib.matches == oc.matches);
    CHECK(lib.total == oc.total);
  }

  MetricReport r = bleu_corpus({hyp}, {ref});
  CHECK(r.bleu == 0.0);  // unsmoothed corpus BLEU: zero higher-order precision
  CHECK(r.bleu_precisions[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sentence_bleu(hyp, ref) > 0.0);  // smoothed sentence score is floored
}

TEST_CASE("corpus BLEU matches the brute-force oracle on random corpora") {
  Rng rng(404);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenSeq> hyps, refs;
    const int pairs = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < pairs; ++i) {
      TokenSeq h, r;
      const int hl = 1 + static_cast<int>(rng.below(8));
      const int rl = 1 + static_cast<int>(rng.below(8));
      for (int k = 0; k < hl; ++k) h.push_back(vocab[static_cast<size_t>(rng.below(5))]);
      for (int k = 0; k < rl; ++k) r.push_back(vocab[static_cast<size_t>(rng.below(5))]);
      hyps.push_back(h);
      refs.push_back(r);
    }
    const MetricReport lib = bleu_corpus(hyps, refs);
    const double oracle = oracle_corpus_bleu(hyps, refs);
    CHECK(std::abs(lib.bleu - oracle) <= 1e-12);
  }
}

TEST_CASE("BLEU brevity penalty and edge cases") {
  // hypothesis shorter than reference: BP = exp(1 - r/c)
  MetricReport r = bleu_corpus({toks("a b c d")}, {toks("a b c d e f g h")});
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(1.0 - 8.0 / 4.0)).epsilon(1e-12));

  // disjoint vocabularies: corpus zero, sentence floored above zero
  MetricReport zero = bleu_corpus({toks("x y z w")}, {toks("a b c d")});
  CHECK(zero.bleu == 0.0);
  CHECK(sentence_bleu(toks("x y z w"), toks("a b c d")) > 0.0);
  CHECK(sentence_bleu(toks("x y z w"), toks("a b c d")) < 1e-6);

  CHECK_THROWS_AS(bleu_corpus({}, {}), EmptyHypothesisSet);
  CHECK_THROWS_AS(bleu_corpus({toks("a")}, {}), ShapeMismatch);
}

TEST_CASE("BLEU monotone sanity: extending with a matching token never loses matches") {
  Rng rng(405);
  const std::vector<std::string> vocab = {"p", "q", "r", "s"};
  for (int trial = 0; trial < 25; ++trial) {
    TokenSeq hyp, ref;
    const int hl = 1 + static_cast<int>(rng.below(6));
    const int rl = 2 + static_cast<int>(rng.below(6));
    for (int k = 0; k < hl; ++k) hyp.push_back(vocab[static_cast<size_t>(rng.below(4))]);
    for (int k = 0; k < rl; ++k) ref.push_back(vocab[static_cast<size_t>(rng.below(4))]);
    const int64_t before = clipped_ngram_precision(hyp, ref, 1).matches;
    TokenSeq extended = hyp;
    extended.push_back(ref[static_cast<size_t>(rng.below(static_cast<int64_t>(ref.size())))]);
    const int64_t after = clipped_ngram_precision(extended, ref, 1).matches;
    CHECK(after >= before);
  }
}

TEST_CASE("BLEU is invariant to jointly permuting the pairs") {
  std::vector<TokenSeq> hyps = {toks("a b c d"), toks("c d e f"), toks("a a b b")};
  std::vector<TokenSeq> refs = {toks("a b c e"), toks("c d e f g"), toks("a b")};
  const double base = bleu_corpus(hyps, refs).bleu;
  std::vector<size_t> perm = {2, 0, 1};
  std::vector<TokenSeq> hp, rp;
  for (size_t i : perm) {
    hp.push_back(hyps[i]);
    rp.push_back(refs[i]);
  }
  CHECK(bleu_corpus(hp, rp).bleu == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("NIST matches the reference implementation on the fixed vignette") {
  std::vector<TokenSeq> hyps, refs;
  for (const auto& [h, r] : kVignette) {
    hyps.push_back(toks(h));
    refs.push_back(toks(r));
  }
  MetricReport report = nist_corpus(hyps, refs);
  CHECK(std::abs(report.nist - kVignetteCorpusNist) <= 1e-6);

  // single-pair scores against the same reference implementation
  CHECK(std::abs(nist_corpus({hyps[0]}, {refs[0]}).nist - kPair0Nist) <= 1e-6);
  CHECK(std::abs(nist_corpus({hyps[1]}, {refs[1]}).nist - kPair1Nist) <= 1e-6);
  CHECK(std::abs(nist_corpus({hyps[3]}, {refs[3]}).nist - kPair3Nist) <= 1e-6);
}

TEST_CASE("NIST identity pair equals its information total over hypothesis counts") {
  // hyp == ref with all-distinct tokens: every unigram carries log2(len),
  // higher orders carry zero information, the penalty is 1
  const TokenSeq sent = toks("a small round fruit of the orchard");
  MetricReport r = nist_corpus({sent}, {sent});
  CHECK(r.nist == doctest::Approx(std::log2(7.0)).epsilon(1e-12));
}

TEST_CASE("NIST: zero matches scores zero, empty input throws") {
  MetricReport r = nist_corpus({toks("x y z v w")}, {toks("a b c d e")});
  CHECK(r.nist == 0.0);
  CHECK_THROWS_AS(nist_corpus({}, {}), EmptyHypothesisSet);
}

TEST_CASE("NIST information weights are frequency-ratio invariant") {
  // doubling every reference count cancels inside log2(prefix/ngram)
  CHECK(nist_info_weight(8, 2) == nist_info_weight(16, 4));
  CHECK(nist_info_weight(3, 1) == doctest::Approx(std::log2(3.0)).epsilon(1e-15));
}

TEST_CASE("NIST brevity factor is 0.5 at a 2/3 length ratio") {
  CHECK(nist_length_penalty(3, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(nist_length_penalty(5, 5) == 1.0);
  CHECK(nist_length_penalty(5, 9) == 1.0);  // long hypotheses are not rewarded
  CHECK(nist_length_penalty(5, 0) == 0.0);
}

TEST_CASE("combined metrics carry both scores and the x100 displays") {
  std::vector<TokenSeq> hyps = {toks("a small round fruit of the orchard")};
  MetricReport r = combined_metrics(hyps, hyps);
  CHECK(r.bleu == 1.0);
  CHECK(r.bleu_x100 == 100.0);
  CHECK(r.nist > 0.0);
  CHECK(r.nist_x100_sentence_avg == doctest::Approx(100.0 * r.nist).epsilon(1e-12));
  CHECK(r.to_json().find("bleu_x100") != std::string::npos);
}
