#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "defgen/metrics.hpp"

namespace defgen::testutil {

/// Brute-force clipped n-gram counts: position-by-position scanning, no
/// count maps. Independent of the library's implementation path.
struct OracleCounts {
  int64_t matches = 0;
  int64_t total = 0;
};

inline OracleCounts oracle_clipped(const TokenSeq& hyp, const TokenSeq& ref, int n) {
  OracleCounts out;
  const int64_t h = static_cast<int64_t>(hyp.size()) - n + 1;
  const int64_t r = static_cast<int64_t>(ref.size()) - n + 1;
  if (h <= 0) return out;
  out.total = h;
  auto same_at = [&](const TokenSeq& a, int64_t i, const TokenSeq& b, int64_t j) {
    for (int k = 0; k < n; ++k) {
      if (a[static_cast<size_t>(i + k)] != b[static_cast<size_t>(j + k)]) return false;
    }
    return true;
  };
  for (int64_t i = 0; i < h; ++i) {
    bool first_occurrence = true;  // count each distinct n-gram once
    for (int64_t j = 0; j < i; ++j) {
      if (same_at(hyp, i, hyp, j)) {
        first_occurrence = false;
        break;
      }
    }
    if (!first_occurrence) continue;
    int64_t in_hyp = 0, in_ref = 0;
    for (int64_t j = 0; j < h; ++j) in_hyp += same_at(hyp, j, hyp, i) ? 1 : 0;
    for (int64_t j = 0; j < std::max<int64_t>(r, 0); ++j) in_ref += same_at(ref, j, hyp, i) ? 1 : 0;
    out.matches += std::min(in_hyp, in_ref);
  }
  return out;
}

inline double oracle_corpus_bleu(const std::vector<TokenSeq>& hyps,
                                 const std::vector<TokenSeq>& refs, int max_n = 4) {
  double log_sum = 0.0;
  int64_t c = 0, r = 0;
  for (int n = 1; n <= max_n; ++n) {
    int64_t m = 0, tot = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
      const OracleCounts oc = oracle_clipped(hyps[i], refs[i], n);
      m += oc.matches;
      tot += oc.total;
    }
    if (m == 0 || tot == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / static_cast<double>(tot)) / max_n;
  }
  for (size_t i = 0; i < hyps.size(); ++i) {
    c += static_cast<int64_t>(hyps[i].size());
    r += static_cast<int64_t>(refs[i].size());
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum);
}

}  // namespace defgen::testutil
