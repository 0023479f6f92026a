#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "defgen/data.hpp"
#include "defgen/rng.hpp"
#include "defgen/tensor.hpp"

namespace defgen {

struct ModelConfig {
  int64_t n_encoder_layers = 2;  // L_E
  int64_t n_decoder_layers = 2;  // L_D
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t d_ff = 256;
  int64_t vocab_size = 0;
  int64_t max_len = 128;
  double dropout = 0.0;
  bool tie_lm_head = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// All learnable weights, keyed by stable names (map order is the
/// serialization order).
struct ModelParams {
  std::map<std::string, Tensor> tensors;

  static ModelParams init(const ModelConfig& cfg, Rng& rng);

  int64_t count_values() const;
  bool all_finite() const;
};

/// Parameters lifted onto a tape as leaves, in name order.
struct ParamHandles {
  std::map<std::string, Var> vars;
  Var at(const std::string& name) const;
};

ParamHandles lift_params(Tape& t, const ModelParams& params);

/// Reads accumulated leaf gradients back out, keyed like the params.
std::map<std::string, Tensor> read_grads(const Tape& t, const ParamHandles& handles);

/// Training-time dropout source. Inactive (or p == 0) is an exact
/// pass-through so eval and determinism tests see the identical graph.
struct DropoutState {
  Rng* rng = nullptr;
  bool active = false;
};

/// Sinusoidal absolute position table, rows 0..len-1.
Tensor positional_table(int64_t len, int64_t d_model);

/// Encoder stack: returns the last hidden state as [n*s x d_model] rows.
/// Padding is attention-masked; no non-pad output depends on pad tokens.
Var encode(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
           const std::vector<int>& ids, const std::vector<uint8_t>& pad_mask, int64_t n,
           int64_t s, DropoutState dropout = {});

/// Per-sample target rows of the encoder output, order preserved.
std::vector<Var> extract_target(Tape& t, Var enc_h, const std::vector<uint8_t>& target_mask,
                                int64_t n, int64_t s);

/// Decoder stack under teacher forcing: causal self-attention over the
/// definition prefix plus cross-attention into the encoder state.
Var decode_teacher_forced(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var enc_h,
                          const std::vector<uint8_t>& enc_pad_mask, int64_t enc_len,
                          const std::vector<int>& dec_ids,
                          const std::vector<uint8_t>& dec_pad_mask, int64_t n, int64_t t_len,
                          DropoutState dropout = {});

/// Raw vocabulary logits [rows x |V|]; softmax stays inside the losses.
Var lm_head(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var dec_g);

// Batch conveniences.
Var encode(Tape& t, const ParamHandles& p, const ModelConfig& cfg, const Batch& b,
           DropoutState dropout = {});
Var decode_teacher_forced(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var enc_h,
                          const Batch& b, DropoutState dropout = {});

}  // namespace defgen
