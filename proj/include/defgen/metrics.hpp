#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defgen/errors.hpp"

namespace defgen {

using TokenSeq = std::vector<std::string>;

/// Corpus scores plus per-sample breakdowns. Scores are kept on their raw
/// scales (BLEU in [0,1], NIST as Doddington defines it); the x100 fields
/// are the display convention used in the literature.
struct MetricReport {
  double bleu = 0.0;
  double bleu_x100 = 0.0;
  double nist = 0.0;                    // raw corpus NIST
  double nist_x100_sentence_avg = 0.0;  // mean per-sentence NIST x 100
  std::vector<double> bleu_precisions;  // clipped n-gram precisions
  double brevity_penalty = 1.0;
  std::vector<double> sentence_bleu_scores;
  std::vector<double> sentence_nist_scores;

  std::string to_json(int indent = -1) const;
};

/// Clipped (modified) n-gram matches of a hypothesis against a reference.
struct NgramPrecision {
  int64_t matches = 0;  // clipped at the reference count
  int64_t total = 0;    // hypothesis n-gram count
};
NgramPrecision clipped_ngram_precision(const TokenSeq& hyp, const TokenSeq& ref, int n);

/// Corpus BLEU: geometric mean of clipped precisions up to max_n with the
/// brevity penalty exp(1 - r/c) for c < r. Unsmoothed: any zero precision
/// zeroes the score. Throws EmptyHypothesisSet.
MetricReport bleu_corpus(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                         int max_n = 4);

/// Sentence BLEU with a 1e-9 floor on zero precisions (short definitions
/// make the unsmoothed form degenerate).
double sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref, int max_n = 4, double eps = 1e-9);

/// Corpus NIST (Doddington 2002), matching the standard toolkit scoring:
/// information weights log2(count(prefix)/count(ngram)) over the reference
/// corpus, micro-averaged matched information per order, and the NIST
/// brevity factor calibrated to 0.5 at a 2/3 length ratio.
MetricReport nist_corpus(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                         int max_n = 5);

/// Information weight of one n-gram under reference-corpus counts.
double nist_info_weight(int64_t prefix_count, int64_t ngram_count);

/// NIST brevity factor for total hypothesis/reference lengths.
double nist_length_penalty(int64_t ref_len, int64_t hyp_len);

/// Both metrics over one decoded split.
MetricReport combined_metrics(const std::vector<TokenSeq>& hyps,
                              const std::vector<TokenSeq>& refs);

}  // namespace defgen
