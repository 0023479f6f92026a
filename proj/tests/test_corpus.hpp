#pragma once

#include <string>
#include <vector>

#include "defgen/data.hpp"
#include "defgen/training.hpp"

namespace defgen::testutil {

/// Small, distinct, memorizable entries for training-loop tests.
inline std::vector<Entry> small_corpus(int count) {
  const std::vector<std::string> heads = {"tool", "animal", "place", "drink", "cloth"};
  std::vector<Entry> entries;
  for (int i = 0; i < count; ++i) {
    Entry e;
    const std::string w = "item" + std::to_string(i);
    e.word_tokens = {w};
    e.context_tokens = {"the", w, "was", "seen", "today"};
    e.definition_tokens = {"a", heads[static_cast<size_t>(i) % heads.size()],
                           "numbered", std::to_string(i)};
    e.span_begin = 1;
    e.span_end = 2;
    entries.push_back(e);
  }
  return entries;
}

inline RunConfig small_run_config(const Vocab& vocab, uint64_t seed = 1) {
  RunConfig run;
  run.model.n_encoder_layers = 1;
  run.model.n_decoder_layers = 1;
  run.model.d_model = 16;
  run.model.n_heads = 2;
  run.model.d_ff = 32;
  run.model.vocab_size = vocab.size();
  run.model.max_len = 32;
  run.batch_size = 4;
  run.seed = seed;
  run.stage1.stage = StageKind::one;
  run.stage1.max_epoch = 3;
  run.stage1.early_stop_patience = 3;
  run.stage2.stage = StageKind::two;
  run.stage2.max_epoch = 3;
  run.stage2.early_stop_patience = 3;
  run.stage2.pooling = PoolingKind::max;
  run.stage2.lambda = 0.8;
  return run;
}

}  // namespace defgen::testutil
