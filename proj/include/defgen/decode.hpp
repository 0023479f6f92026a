#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defgen/data.hpp"
#include "defgen/metrics.hpp"
#include "defgen/model.hpp"
#include "defgen/objectives.hpp"

namespace defgen {

struct DecodeConfig {
  enum class Strategy { greedy, beam };
  Strategy strategy = Strategy::greedy;
  int64_t beam_size = 1;  // greedy is beam_size 1
  int64_t max_decode_len = 32;
  double length_penalty = 0.0;  // score = logprob / len^alpha; 0 = raw sum

  void validate() const;
};

struct GenerationResult {
  std::vector<int> ids;    // definition token ids, no BOS/EOS
  double logprob = 0.0;    // sum of token log-probabilities (incl. EOS)
  bool truncated = false;  // max_decode_len reached without EOS
};

/// Autoregressive decoding from BOS until EOS or the length cap. Beam
/// search ranks finished beams by length-penalized log-probability; ties
/// break toward the lexicographically smaller token id sequence.
GenerationResult generate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                          const Entry& entry, const DecodeConfig& dcfg,
                          TargetSegment segment = TargetSegment::context);

struct SplitEvaluation {
  MetricReport report;
  std::vector<GenerationResult> generations;
};

/// Decodes every entry, scores BLEU + NIST against the reference
/// definitions, and (optionally) writes the per-sample TSV
/// (word, context, reference, hypothesis, sentence BLEU).
SplitEvaluation evaluate_split(const ModelParams& params, const ModelConfig& cfg,
                               const Vocab& vocab, const std::vector<Entry>& entries,
                               const DecodeConfig& dcfg,
                               TargetSegment segment = TargetSegment::context,
                               const std::string& tsv_path = "");

/// Mean diagonal/off-diagonal cosine similarity and retrieval accuracy of
/// the pooled (h, g) representations over a whole split, treated as one
/// in-batch similarity problem.
AlignmentDiagnostics split_alignment(const ModelParams& params, const ModelConfig& cfg,
                                     const Vocab& vocab, const std::vector<Entry>& entries,
                                     PoolingKind pooling,
                                     TargetSegment segment = TargetSegment::context);

}  // namespace defgen
