#include "defgen/model.hpp"

#include <cmath>

#include "json.hpp"

namespace defgen {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_encoder_layers < 1 || n_decoder_layers < 1) {
    throw ConfigMismatch("model: layer counts must be >= 1");
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigMismatch("model: d_model must be a positive multiple of n_heads");
  }
  if (d_ff < 1 || vocab_size < Vocab::kNumSpecials || max_len < 1) {
    throw ConfigMismatch("model: bad d_ff / vocab_size / max_len");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigMismatch("model: dropout must be in [0, 1)");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {
      {"L_E", n_encoder_layers}, {"L_D", n_decoder_layers}, {"d_model", d_model},
      {"n_heads", n_heads},      {"d_ff", d_ff},            {"vocab_size", vocab_size},
      {"max_len", max_len},      {"dropout", dropout},      {"tie_lm_head", tie_lm_head}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.n_encoder_layers = j.at("L_E").get<int64_t>();
  c.n_decoder_layers = j.at("L_D").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.d_ff = j.at("d_ff").get<int64_t>();
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.max_len = j.at("max_len").get<int64_t>();
  c.dropout = j.at("dropout").get<double>();
  c.tie_lm_head = j.at("tie_lm_head").get<bool>();
  return c;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

namespace {

constexpr double kInitStd = 0.08;

Tensor gauss_tensor(std::vector<int64_t> shape, double std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values) v = std * rng.gauss();
  return t;
}

void add_layer_norm(ModelParams& p, const std::string& prefix, int64_t d) {
  p.tensors[prefix + ".gain"] = Tensor::full({1, d}, 1.0);
  p.tensors[prefix + ".bias"] = Tensor::zeros({1, d});
}

void add_attention(ModelParams& p, const std::string& prefix, int64_t d, Rng& rng) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    p.tensors[prefix + "." + w] = gauss_tensor({d, d}, kInitStd, rng);
  }
  for (const char* b : {"bq", "bk", "bv", "bo"}) {
    p.tensors[prefix + "." + b] = Tensor::zeros({1, d});
  }
}

void add_ffn(ModelParams& p, const std::string& prefix, int64_t d, int64_t d_ff, Rng& rng) {
  p.tensors[prefix + ".w1"] = gauss_tensor({d, d_ff}, kInitStd, rng);
  p.tensors[prefix + ".b1"] = Tensor::zeros({1, d_ff});
  p.tensors[prefix + ".w2"] = gauss_tensor({d_ff, d}, kInitStd, rng);
  p.tensors[prefix + ".b2"] = Tensor::zeros({1, d});
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.tensors["embedding"] = gauss_tensor({cfg.vocab_size, cfg.d_model}, kInitStd, rng);
  if (!cfg.tie_lm_head) {
    p.tensors["lm_head"] = gauss_tensor({cfg.vocab_size, cfg.d_model}, kInitStd, rng);
  }
  for (int64_t l = 0; l < cfg.n_encoder_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    add_layer_norm(p, base + ".ln1", cfg.d_model);
    add_attention(p, base + ".attn", cfg.d_model, rng);
    add_layer_norm(p, base + ".ln2", cfg.d_model);
    add_ffn(p, base + ".ffn", cfg.d_model, cfg.d_ff, rng);
  }
  add_layer_norm(p, "enc.final_ln", cfg.d_model);
  for (int64_t l = 0; l < cfg.n_decoder_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    add_layer_norm(p, base + ".ln1", cfg.d_model);
    add_attention(p, base + ".self", cfg.d_model, rng);
    add_layer_norm(p, base + ".ln2", cfg.d_model);
    add_attention(p, base + ".cross", cfg.d_model, rng);
    add_layer_norm(p, base + ".ln3", cfg.d_model);
    add_ffn(p, base + ".ffn", cfg.d_model, cfg.d_ff, rng);
  }
  add_layer_norm(p, "dec.final_ln", cfg.d_model);
  return p;
}

int64_t ModelParams::count_values() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : tensors) {
    if (!t.all_finite()) return false;
  }
  return true;
}

ParamHandles lift_params(Tape& t, const ModelParams& params) {
  ParamHandles h;
  for (const auto& [name, tensor] : params.tensors) h.vars[name] = t.leaf(tensor);
  return h;
}

Var ParamHandles::at(const std::string& name) const {
  const auto it = vars.find(name);
  if (it == vars.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

std::map<std::string, Tensor> read_grads(const Tape& t, const ParamHandles& handles) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : handles.vars) grads[name] = t.grad(var);
  return grads;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

Tensor positional_table(int64_t len, int64_t d_model) {
  Tensor p = Tensor::zeros({len, d_model});
  for (int64_t pos = 0; pos < len; ++pos) {
    for (int64_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      p.at(pos, i) = std::sin(angle);
      if (i + 1 < d_model) p.at(pos, i + 1) = std::cos(angle);
    }
  }
  return p;
}

namespace {

Var linear(Tape& t, const ParamHandles& p, const std::string& prefix_w,
           const std::string& prefix_b, Var x) {
  return add_bias(t, matmul(t, x, p.at(prefix_w)), p.at(prefix_b));
}

Var apply_layer_norm(Tape& t, const ParamHandles& p, const std::string& prefix, Var x) {
  return layer_norm(t, x, p.at(prefix + ".gain"), p.at(prefix + ".bias"));
}

Var maybe_dropout(Tape& t, Var x, double p_drop, DropoutState& dropout) {
  if (!dropout.active || p_drop <= 0.0) return x;
  const Tensor& xv = t.value(x);
  Tensor mask = Tensor::zeros(xv.shape);
  const double keep_scale = 1.0 / (1.0 - p_drop);
  for (double& v : mask.values) {
    v = dropout.rng->uniform() < p_drop ? 0.0 : keep_scale;
  }
  return mul_constant(t, x, mask);
}

/// Multi-head attention over already-normalized inputs.
/// queries: [n*q_len x d]; keys/values come from kv: [n*kv_len x d].
/// keep(sample, qi, ki) -> admissible key positions.
template <class KeepFn>
Var multi_head_attention(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
                         const std::string& prefix, Var queries, Var kv, int64_t n,
                         int64_t q_len, int64_t kv_len, KeepFn keep, DropoutState& dropout) {
  const int64_t d = cfg.d_model;
  const int64_t dh = d / cfg.n_heads;
  Var q_all = linear(t, p, prefix + ".wq", prefix + ".bq", queries);
  Var k_all = linear(t, p, prefix + ".wk", prefix + ".bk", kv);
  Var v_all = linear(t, p, prefix + ".wv", prefix + ".bv", kv);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Var> per_sample;
  per_sample.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Var qi = slice_rows(t, q_all, i * q_len, (i + 1) * q_len);
    Var ki = slice_rows(t, k_all, i * kv_len, (i + 1) * kv_len);
    Var vi = slice_rows(t, v_all, i * kv_len, (i + 1) * kv_len);

    std::vector<uint8_t> keep_mask(static_cast<size_t>(q_len * kv_len));
    for (int64_t r = 0; r < q_len; ++r) {
      for (int64_t c = 0; c < kv_len; ++c) {
        keep_mask[static_cast<size_t>(r * kv_len + c)] = keep(i, r, c) ? 1 : 0;
      }
    }

    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
      Var qh = slice_cols(t, qi, h * dh, (h + 1) * dh);
      Var kh = slice_cols(t, ki, h * dh, (h + 1) * dh);
      Var vh = slice_cols(t, vi, h * dh, (h + 1) * dh);
      Var scores = scale(t, matmul(t, qh, kh, false, true), inv_sqrt_dh);
      Var probs = masked_softmax_rows(t, scores, keep_mask);
      probs = maybe_dropout(t, probs, cfg.dropout, dropout);
      heads.push_back(matmul(t, probs, vh));
    }
    per_sample.push_back(concat_cols(t, heads));
  }
  Var ctx = n == 1 ? per_sample[0] : concat_rows(t, per_sample);
  return linear(t, p, prefix + ".wo", prefix + ".bo", ctx);
}

Var feed_forward(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
                 const std::string& prefix, Var x, DropoutState& dropout) {
  Var h = gelu(t, linear(t, p, prefix + ".w1", prefix + ".b1", x));
  Var out = linear(t, p, prefix + ".w2", prefix + ".b2", h);
  return maybe_dropout(t, out, cfg.dropout, dropout);
}

Var embed_with_positions(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
                         const std::vector<int>& ids, int64_t n, int64_t len) {
  if (len > cfg.max_len) {
    throw SequenceTooLong("sequence length " + std::to_string(len) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
  }
  Var emb = embedding(t, p.at("embedding"), ids);
  const Tensor table = positional_table(len, cfg.d_model);
  Tensor pos = Tensor::zeros({n * len, cfg.d_model});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(table.values.begin(), table.values.end(),
              pos.values.begin() + static_cast<int64_t>(i * len * cfg.d_model));
  }
  return add_constant(t, emb, pos);
}

}  // namespace

Var encode(Tape& t, const ParamHandles& p, const ModelConfig& cfg, const std::vector<int>& ids,
           const std::vector<uint8_t>& pad_mask, int64_t n, int64_t s, DropoutState dropout) {
  if (static_cast<int64_t>(ids.size()) != n * s || pad_mask.size() != ids.size()) {
    throw ShapeMismatch("encode: ids/mask sizes disagree with n*s");
  }
  Var x = embed_with_positions(t, p, cfg, ids, n, s);
  // every query row may read all real positions of its own sample
  auto keep = [&](int64_t sample, int64_t /*q*/, int64_t key) {
    return pad_mask[static_cast<size_t>(sample * s + key)] != 0;
  };
  for (int64_t l = 0; l < cfg.n_encoder_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    Var normed = apply_layer_norm(t, p, base + ".ln1", x);
    x = add(t, x, multi_head_attention(t, p, cfg, base + ".attn", normed, normed, n, s, s, keep,
                                       dropout));
    Var normed2 = apply_layer_norm(t, p, base + ".ln2", x);
    x = add(t, x, feed_forward(t, p, cfg, base + ".ffn", normed2, dropout));
  }
  return apply_layer_norm(t, p, "enc.final_ln", x);
}

std::vector<Var> extract_target(Tape& t, Var enc_h, const std::vector<uint8_t>& target_mask,
                                int64_t n, int64_t s) {
  if (static_cast<int64_t>(target_mask.size()) != n * s) {
    throw ShapeMismatch("extract_target: mask size disagrees with n*s");
  }
  std::vector<Var> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::vector<Var> rows;
    int64_t run_begin = -1;
    for (int64_t j = 0; j < s; ++j) {
      const bool flagged = target_mask[static_cast<size_t>(i * s + j)] != 0;
      if (flagged && run_begin < 0) run_begin = j;
      const bool run_ends = run_begin >= 0 && (!flagged || j + 1 == s);
      if (run_ends) {
        const int64_t run_end = flagged ? j + 1 : j;
        rows.push_back(slice_rows(t, enc_h, i * s + run_begin, i * s + run_end));
        run_begin = -1;
      }
    }
    if (rows.empty()) {
      throw EmptyTarget("extract_target: sample " + std::to_string(i) + " has no flagged position");
    }
    out.push_back(rows.size() == 1 ? rows[0] : concat_rows(t, rows));
  }
  return out;
}

Var decode_teacher_forced(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var enc_h,
                          const std::vector<uint8_t>& enc_pad_mask, int64_t enc_len,
                          const std::vector<int>& dec_ids,
                          const std::vector<uint8_t>& dec_pad_mask, int64_t n, int64_t t_len,
                          DropoutState dropout) {
  if (static_cast<int64_t>(dec_ids.size()) != n * t_len || dec_pad_mask.size() != dec_ids.size()) {
    throw ShapeMismatch("decode: ids/mask sizes disagree with n*t");
  }
  if (t.value(enc_h).rows() != n * enc_len) {
    throw ShapeMismatch("decode: encoder state rows disagree with n*enc_len");
  }
  Var x = embed_with_positions(t, p, cfg, dec_ids, n, t_len);
  auto keep_causal = [&](int64_t sample, int64_t q, int64_t key) {
    return key <= q && dec_pad_mask[static_cast<size_t>(sample * t_len + key)] != 0;
  };
  auto keep_cross = [&](int64_t sample, int64_t /*q*/, int64_t key) {
    return enc_pad_mask[static_cast<size_t>(sample * enc_len + key)] != 0;
  };
  for (int64_t l = 0; l < cfg.n_decoder_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    Var normed = apply_layer_norm(t, p, base + ".ln1", x);
    x = add(t, x, multi_head_attention(t, p, cfg, base + ".self", normed, normed, n, t_len, t_len,
                                       keep_causal, dropout));
    Var normed2 = apply_layer_norm(t, p, base + ".ln2", x);
    x = add(t, x, multi_head_attention(t, p, cfg, base + ".cross", normed2, enc_h, n, t_len,
                                       enc_len, keep_cross, dropout));
    Var normed3 = apply_layer_norm(t, p, base + ".ln3", x);
    x = add(t, x, feed_forward(t, p, cfg, base + ".ffn", normed3, dropout));
  }
  return apply_layer_norm(t, p, "dec.final_ln", x);
}

Var lm_head(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var dec_g) {
  Var table = cfg.tie_lm_head ? p.at("embedding") : p.at("lm_head");
  return matmul(t, dec_g, table, false, true);
}

Var encode(Tape& t, const ParamHandles& p, const ModelConfig& cfg, const Batch& b,
           DropoutState dropout) {
  return encode(t, p, cfg, b.encoder_ids, b.encoder_pad_mask, b.n, b.enc_len, dropout);
}

Var decode_teacher_forced(Tape& t, const ParamHandles& p, const ModelConfig& cfg, Var enc_h,
                          const Batch& b, DropoutState dropout) {
  return decode_teacher_forced(t, p, cfg, enc_h, b.encoder_pad_mask, b.enc_len, b.decoder_in,
                               b.decoder_pad_mask, b.n, b.dec_len, dropout);
}

}  // namespace defgen
