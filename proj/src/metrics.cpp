#include "defgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"

namespace defgen {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int64_t> count_ngrams(const TokenSeq& seq, int n) {
  std::map<Ngram, int64_t> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i) {
    ++counts[Ngram(seq.begin() + static_cast<int64_t>(i),
                   seq.begin() + static_cast<int64_t>(i) + n)];
  }
  return counts;
}

void check_inputs(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                  const char* who) {
  if (hyps.empty()) throw EmptyHypothesisSet(std::string(who) + ": no hypotheses");
  if (hyps.size() != refs.size()) {
    throw ShapeMismatch(std::string(who) + ": hypothesis/reference counts differ");
  }
}

}  // namespace

std::string MetricReport::to_json(int indent) const {
  nlohmann::json j;
  j["bleu"] = bleu;
  j["bleu_x100"] = bleu_x100;
  j["nist"] = nist;
  j["nist_x100_sentence_avg"] = nist_x100_sentence_avg;
  j["bleu_precisions"] = bleu_precisions;
  j["brevity_penalty"] = brevity_penalty;
  j["sentence_bleu"] = sentence_bleu_scores;
  j["sentence_nist"] = sentence_nist_scores;
  j["scale_note"] =
      "bleu in [0,1]; nist is the raw corpus score; *_x100 fields are the "
      "display convention (nist_x100_sentence_avg averages per-sentence NIST)";
  return indent >= 0 ? j.dump(indent) : j.dump();
}

NgramPrecision clipped_ngram_precision(const TokenSeq& hyp, const TokenSeq& ref, int n) {
  NgramPrecision p;
  const auto hyp_counts = count_ngrams(hyp, n);
  const auto ref_counts = count_ngrams(ref, n);
  for (const auto& [gram, count] : hyp_counts) {
    p.total += count;
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) p.matches += std::min(count, it->second);
  }
  return p;
}

MetricReport bleu_corpus(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                         int max_n) {
  check_inputs(hyps, refs, "bleu_corpus");
  MetricReport report;

  std::vector<int64_t> matches(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> totals(static_cast<size_t>(max_n), 0);
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<int64_t>(hyps[i].size());
    ref_len += static_cast<int64_t>(refs[i].size());
    for (int n = 1; n <= max_n; ++n) {
      const NgramPrecision p = clipped_ngram_precision(hyps[i], refs[i], n);
      matches[static_cast<size_t>(n - 1)] += p.matches;
      totals[static_cast<size_t>(n - 1)] += p.total;
    }
    report.sentence_bleu_scores.push_back(sentence_bleu(hyps[i], refs[i], max_n));
  }

  report.brevity_penalty =
      (hyp_len == 0) ? 0.0
      : (hyp_len < ref_len)
          ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
          : 1.0;

  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const int64_t m = matches[static_cast<size_t>(n - 1)];
    const int64_t tot = totals[static_cast<size_t>(n - 1)];
    const double prec = tot == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(tot);
    report.bleu_precisions.push_back(prec);
    if (prec <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(prec) / static_cast<double>(max_n);
    }
  }
  report.bleu = any_zero ? 0.0 : report.brevity_penalty * std::exp(log_sum);
  report.bleu_x100 = 100.0 * report.bleu;
  return report;
}

double sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref, int max_n, double eps) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramPrecision p = clipped_ngram_precision(hyp, ref, n);
    const double prec =
        p.total == 0 ? eps
                     : std::max(eps, static_cast<double>(p.matches) / static_cast<double>(p.total));
    log_sum += std::log(prec) / static_cast<double>(max_n);
  }
  const double bp = hyp.size() < ref.size()
                        ? std::exp(1.0 - static_cast<double>(ref.size()) /
                                             static_cast<double>(hyp.size()))
                        : 1.0;
  return bp * std::exp(log_sum);
}

double nist_info_weight(int64_t prefix_count, int64_t ngram_count) {
  return std::log2(static_cast<double>(prefix_count) / static_cast<double>(ngram_count));
}

double nist_length_penalty(int64_t ref_len, int64_t hyp_len) {
  if (ref_len == 0) return 0.0;
  const double ratio = static_cast<double>(hyp_len) / static_cast<double>(ref_len);
  if (ratio > 0.0 && ratio < 1.0) {
    // beta chosen so the factor is 0.5 when the hypothesis is 2/3 of the
    // reference length
    const double beta = std::log(0.5) / (std::log(1.5) * std::log(1.5));
    return std::exp(beta * std::log(ratio) * std::log(ratio));
  }
  return std::max(0.0, std::min(ratio, 1.0));
}

namespace {

struct NistWeights {
  std::map<Ngram, double> info;
  int64_t total_reference_words = 0;
};

NistWeights nist_information_weights(const std::vector<TokenSeq>& refs, int max_n) {
  NistWeights w;
  std::map<Ngram, int64_t> freq;
  for (const TokenSeq& ref : refs) {
    w.total_reference_words += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      for (const auto& [gram, count] : count_ngrams(ref, n)) freq[gram] += count;
    }
  }
  for (const auto& [gram, count] : freq) {
    Ngram prefix(gram.begin(), gram.end() - 1);
    int64_t numerator = w.total_reference_words;
    if (!prefix.empty()) {
      const auto it = freq.find(prefix);
      if (it != freq.end()) numerator = it->second;
    }
    w.info[gram] = nist_info_weight(numerator, count);
  }
  return w;
}

// matched information and hypothesis n-gram count for one pair at order n
std::pair<double, int64_t> nist_pair_order(const NistWeights& w, const TokenSeq& hyp,
                                           const TokenSeq& ref, int n) {
  const auto hyp_counts = count_ngrams(hyp, n);
  const auto ref_counts = count_ngrams(ref, n);
  double matched_info = 0.0;
  int64_t total = 0;
  for (const auto& [gram, count] : hyp_counts) {
    total += count;
    const auto rit = ref_counts.find(gram);
    if (rit == ref_counts.end()) continue;
    const auto wit = w.info.find(gram);
    const double info = wit == w.info.end() ? 0.0 : wit->second;
    matched_info += info * static_cast<double>(std::min(count, rit->second));
  }
  return {matched_info, total};
}

double nist_from_weights(const NistWeights& w, const std::vector<TokenSeq>& hyps,
                         const std::vector<TokenSeq>& refs, int max_n) {
  double score = 0.0;
  int64_t hyp_len = 0, ref_len = 0;
  for (int n = 1; n <= max_n; ++n) {
    double matched_info = 0.0;
    int64_t total = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
      const auto [mi, tot] = nist_pair_order(w, hyps[i], refs[i], n);
      matched_info += mi;
      total += tot;
    }
    if (total > 0) score += matched_info / static_cast<double>(total);
  }
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<int64_t>(hyps[i].size());
    ref_len += static_cast<int64_t>(refs[i].size());
  }
  return score * nist_length_penalty(ref_len, hyp_len);
}

}  // namespace

MetricReport nist_corpus(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs,
                         int max_n) {
  check_inputs(hyps, refs, "nist_corpus");
  MetricReport report;
  const NistWeights w = nist_information_weights(refs, max_n);
  report.nist = nist_from_weights(w, hyps, refs, max_n);
  double sent_sum = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    // per-sentence score under corpus-wide information weights
    const double s = nist_from_weights(w, {hyps[i]}, {refs[i]}, max_n);
    report.sentence_nist_scores.push_back(s);
    sent_sum += s;
  }
  report.nist_x100_sentence_avg = 100.0 * sent_sum / static_cast<double>(hyps.size());
  return report;
}

MetricReport combined_metrics(const std::vector<TokenSeq>& hyps,
                              const std::vector<TokenSeq>& refs) {
  MetricReport bleu = bleu_corpus(hyps, refs);
  const MetricReport nist = nist_corpus(hyps, refs);
  bleu.nist = nist.nist;
  bleu.nist_x100_sentence_avg = nist.nist_x100_sentence_avg;
  bleu.sentence_nist_scores = nist.sentence_nist_scores;
  return bleu;
}

}  // namespace defgen
