#include "defgen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "defgen/objectives.hpp"

namespace defgen {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigMismatch("decode: beam_size must be >= 1");
  if (max_decode_len < 0) throw ConfigMismatch("decode: max_decode_len must be >= 0");
  if (strategy == Strategy::greedy && beam_size != 1) {
    throw ConfigMismatch("decode: greedy strategy requires beam_size 1");
  }
}

namespace {

// Encoder state of one entry, reusable across decode steps.
struct EncodedEntry {
  Tensor enc_h;  // [s x d]
  std::vector<uint8_t> enc_mask;
  int64_t enc_len = 0;
};

EncodedEntry encode_entry(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                          const Entry& entry, TargetSegment segment) {
  const Spliced sp = splice(entry, vocab, segment);
  EncodedEntry out;
  out.enc_len = static_cast<int64_t>(sp.ids.size());
  out.enc_mask.assign(sp.ids.size(), 1);
  Tape t;
  ParamHandles p = lift_params(t, params);
  out.enc_h = t.value(encode(t, p, cfg, sp.ids, out.enc_mask, 1, out.enc_len));
  return out;
}

// Log-probabilities of the next token for every row prefix. prefixes are
// BOS-prefixed id rows of equal length.
std::vector<std::vector<double>> next_token_logprobs(const ModelParams& params,
                                                     const ModelConfig& cfg,
                                                     const EncodedEntry& enc,
                                                     const std::vector<std::vector<int>>& prefixes) {
  const int64_t n = static_cast<int64_t>(prefixes.size());
  const int64_t t_len = static_cast<int64_t>(prefixes[0].size());
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(n * t_len));
  for (const auto& row : prefixes) ids.insert(ids.end(), row.begin(), row.end());
  std::vector<uint8_t> dmask(static_cast<size_t>(n * t_len), 1);

  // replicate the encoder state per row
  Tape t;
  ParamHandles p = lift_params(t, params);
  Tensor enc_rep = Tensor::zeros({n * enc.enc_len, cfg.d_model});
  std::vector<uint8_t> enc_mask_rep;
  enc_mask_rep.reserve(static_cast<size_t>(n * enc.enc_len));
  for (int64_t i = 0; i < n; ++i) {
    std::copy(enc.enc_h.values.begin(), enc.enc_h.values.end(),
              enc_rep.values.begin() + i * enc.enc_len * cfg.d_model);
    enc_mask_rep.insert(enc_mask_rep.end(), enc.enc_mask.begin(), enc.enc_mask.end());
  }
  Var enc_h = t.leaf(std::move(enc_rep));
  Var g = decode_teacher_forced(t, p, cfg, enc_h, enc_mask_rep, enc.enc_len, ids, dmask, n, t_len);
  Var logits = lm_head(t, p, cfg, g);
  const Tensor& lv = t.value(logits);

  std::vector<std::vector<double>> out(static_cast<size_t>(n));
  const int64_t v = cfg.vocab_size;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = lv.values.data() + ((i + 1) * t_len - 1) * v;  // last position
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    auto& dst = out[static_cast<size_t>(i)];
    dst.resize(static_cast<size_t>(v));
    for (int64_t j = 0; j < v; ++j) dst[static_cast<size_t>(j)] = row[j] - lse;
  }
  return out;
}

struct BeamItem {
  std::vector<int> ids;  // emitted tokens, EOS excluded
  double logprob = 0.0;
  bool done = false;
};

double penalized_score(const BeamItem& b, double alpha) {
  const auto len = static_cast<double>(b.ids.size() + 1);  // count the EOS step
  return alpha == 0.0 ? b.logprob : b.logprob / std::pow(len, alpha);
}

bool beam_less(const BeamItem& a, const BeamItem& b, double score_a, double score_b) {
  if (score_a != score_b) return score_a > score_b;
  return a.ids < b.ids;  // deterministic tie-break by token ids
}

}  // namespace

GenerationResult generate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                          const Entry& entry, const DecodeConfig& dcfg, TargetSegment segment) {
  dcfg.validate();
  cfg.validate();
  const EncodedEntry enc = encode_entry(params, cfg, vocab, entry, segment);
  const int64_t beam_width = dcfg.strategy == DecodeConfig::Strategy::greedy ? 1 : dcfg.beam_size;

  std::vector<BeamItem> beams = {BeamItem{}};
  for (int64_t step = 0; step < dcfg.max_decode_len; ++step) {
    std::vector<size_t> active;
    for (size_t i = 0; i < beams.size(); ++i) {
      if (!beams[i].done) active.push_back(i);
    }
    if (active.empty()) break;
    if (static_cast<int64_t>(step) + 1 > cfg.max_len - 1) break;  // decoder position budget

    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(active.size());
    for (size_t i : active) {
      std::vector<int> row = {Vocab::kBos};
      row.insert(row.end(), beams[i].ids.begin(), beams[i].ids.end());
      prefixes.push_back(std::move(row));
    }
    const auto logprobs = next_token_logprobs(params, cfg, enc, prefixes);

    std::vector<BeamItem> candidates;
    for (const BeamItem& b : beams) {
      if (b.done) candidates.push_back(b);  // finished beams carry over
    }
    for (size_t k = 0; k < active.size(); ++k) {
      const BeamItem& src = beams[active[k]];
      const auto& lp = logprobs[k];
      for (int64_t tok = 0; tok < cfg.vocab_size; ++tok) {
        BeamItem cand = src;
        cand.logprob += lp[static_cast<size_t>(tok)];
        if (tok == Vocab::kEos) {
          cand.done = true;
        } else {
          cand.ids.push_back(static_cast<int>(tok));
        }
        candidates.push_back(std::move(cand));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const BeamItem& a, const BeamItem& b) {
      return beam_less(a, b, a.logprob, b.logprob);
    });
    if (static_cast<int64_t>(candidates.size()) > beam_width) {
      candidates.resize(static_cast<size_t>(beam_width));
    }
    beams = std::move(candidates);
  }

  // best finished beam under the length penalty; fall back to unfinished
  const BeamItem* best = nullptr;
  bool best_done = false;
  double best_score = 0.0;
  for (const BeamItem& b : beams) {
    const double s = penalized_score(b, dcfg.length_penalty);
    if (best == nullptr || (b.done && !best_done) ||
        (b.done == best_done && beam_less(b, *best, s, best_score))) {
      best = &b;
      best_done = b.done;
      best_score = s;
    }
  }
  GenerationResult out;
  out.ids = best->ids;
  out.logprob = best->logprob;
  out.truncated = !best->done;
  return out;
}

SplitEvaluation evaluate_split(const ModelParams& params, const ModelConfig& cfg,
                               const Vocab& vocab, const std::vector<Entry>& entries,
                               const DecodeConfig& dcfg, TargetSegment segment,
                               const std::string& tsv_path) {
  if (entries.empty()) throw EmptyHypothesisSet("evaluate_split: no entries to decode");
  SplitEvaluation out;
  std::vector<TokenSeq> hyps, refs;
  hyps.reserve(entries.size());
  refs.reserve(entries.size());
  for (const Entry& e : entries) {
    GenerationResult gen = generate(params, cfg, vocab, e, dcfg, segment);
    hyps.push_back(vocab.decode(gen.ids));
    refs.push_back(e.definition_tokens);
    out.generations.push_back(std::move(gen));
  }
  out.report = combined_metrics(hyps, refs);

  if (!tsv_path.empty()) {
    std::ofstream tsv(tsv_path);
    if (!tsv) throw IoError("cannot write per-sample TSV: " + tsv_path);
    auto join = [](const TokenSeq& toks) {
      std::string s;
      for (size_t i = 0; i < toks.size(); ++i) {
        if (i) s += ' ';
        s += toks[i];
      }
      return s;
    };
    for (size_t i = 0; i < entries.size(); ++i) {
      tsv << join(entries[i].word_tokens) << '\t' << join(entries[i].context_tokens) << '\t'
          << join(refs[i]) << '\t' << join(hyps[i]) << '\t'
          << out.report.sentence_bleu_scores[i] << '\n';
    }
  }
  return out;
}

AlignmentDiagnostics split_alignment(const ModelParams& params, const ModelConfig& cfg,
                                     const Vocab& vocab, const std::vector<Entry>& entries,
                                     PoolingKind pooling, TargetSegment segment) {
  if (entries.empty()) throw EmptyCorpus("split_alignment: no entries");
  auto batches = make_batches(entries, vocab, static_cast<int64_t>(entries.size()), std::nullopt,
                              segment);
  const Batch& b = batches[0];
  Tape t;
  ParamHandles p = lift_params(t, params);
  Var enc_h = encode(t, p, cfg, b);
  Var dec_g = decode_teacher_forced(t, p, cfg, enc_h, b);
  auto target_rows = extract_target(t, enc_h, b.target_mask, b.n, b.enc_len);
  PooledPair hg =
      pooled_representations(t, target_rows, dec_g, b.decoder_pad_mask, b.n, b.dec_len, pooling);
  Var sim = cosine_similarity_matrix(t, hg.h, hg.g);
  return alignment_diagnostics(t.value(sim), b.word_ids);
}

}  // namespace defgen
