#include "defgen/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace defgen {

PoolingKind parse_pooling(const std::string& name) {
  if (name == "max") return PoolingKind::max;
  if (name == "mean") return PoolingKind::mean;
  throw ConfigMismatch("unknown pooling kind: " + name);
}

std::string pooling_name(PoolingKind k) { return k == PoolingKind::max ? "max" : "mean"; }

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigMismatch("contrastive: tau must be > 0");
}

Var generation_loss(Tape& t, Var logits, const std::vector<int>& gold,
                    const std::vector<uint8_t>& pad_mask, Reduction red) {
  return cross_entropy_rows(t, logits, gold, pad_mask, red);
}

PooledPair pooled_representations(Tape& t, const std::vector<Var>& target_rows, Var dec_g,
                                  const std::vector<uint8_t>& dec_pad_mask, int64_t n,
                                  int64_t t_len, PoolingKind pooling) {
  if (static_cast<int64_t>(target_rows.size()) != n) {
    throw ShapeMismatch("pooled_representations: target row count disagrees with n");
  }
  if (static_cast<int64_t>(dec_pad_mask.size()) != n * t_len) {
    throw ShapeMismatch("pooled_representations: decoder mask size disagrees with n*t");
  }
  auto pool = [&](Var rows, const std::vector<uint8_t>& include) {
    return pooling == PoolingKind::max ? max_pool_rows(t, rows, include)
                                       : mean_pool_rows(t, rows, include);
  };

  std::vector<Var> hs, gs;
  hs.reserve(static_cast<size_t>(n));
  gs.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const Tensor& rows = t.value(target_rows[static_cast<size_t>(i)]);
    hs.push_back(pool(target_rows[static_cast<size_t>(i)],
                      std::vector<uint8_t>(static_cast<size_t>(rows.rows()), 1)));
    Var gi = slice_rows(t, dec_g, i * t_len, (i + 1) * t_len);
    std::vector<uint8_t> include(dec_pad_mask.begin() + i * t_len,
                                 dec_pad_mask.begin() + (i + 1) * t_len);
    gs.push_back(pool(gi, include));
  }
  return PooledPair{n == 1 ? hs[0] : concat_rows(t, hs), n == 1 ? gs[0] : concat_rows(t, gs)};
}

Var cosine_similarity_matrix(Tape& t, Var h, Var g) {
  if (t.value(h).cols() != t.value(g).cols()) {
    throw ShapeMismatch("cosine_similarity_matrix: widths differ");
  }
  return matmul(t, rows_l2_normalize(t, h), rows_l2_normalize(t, g), false, true);
}

namespace {

// Sum of non-negative values in a permutation-independent order.
double canonical_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

Var contrastive_loss_from_sim(Tape& t, Var sim, double tau, Reduction red) {
  if (!(tau > 0.0)) throw ConfigMismatch("contrastive_loss: tau must be > 0");
  const Tensor& sv = t.value(sim);
  if (sv.shape.size() != 2 || sv.rows() != sv.cols()) {
    throw ShapeMismatch("contrastive_loss: similarity matrix must be square");
  }
  const int64_t n = sv.rows();
  const double inv_tau = 1.0 / tau;

  Tensor probs = Tensor::zeros({n, n});
  std::vector<double> terms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> e(static_cast<size_t>(n));
    double mx = -HUGE_VAL;
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, sv.at(i, j) * inv_tau);
    for (int64_t j = 0; j < n; ++j) e[static_cast<size_t>(j)] = std::exp(sv.at(i, j) * inv_tau - mx);
    const double denom = canonical_sum(e);
    for (int64_t j = 0; j < n; ++j) probs.at(i, j) = e[static_cast<size_t>(j)] / denom;
    // lse - positive logit; always >= 0
    terms[static_cast<size_t>(i)] = std::log(denom) + mx - sv.at(i, i) * inv_tau;
  }
  double total = canonical_sum(terms);
  if (red == Reduction::mean) total /= static_cast<double>(n);

  const int si = sim.id;
  return t.add_node(
      Tensor::scalar(total), {si},
      [si, n, red, inv_tau, probs = std::move(probs)](Tape& tp, int self) {
        const double go = tp.grad_buffer(self).values[0];
        const double w = (red == Reduction::mean ? go / static_cast<double>(n) : go) * inv_tau;
        Tensor& ds = tp.grad_buffer(si);
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < n; ++j) ds.at(i, j) += w * probs.at(i, j);
          ds.at(i, i) -= w;
        }
      },
      "contrastive_loss");
}

Var contrastive_loss(Tape& t, Var h, Var g, double tau, Reduction red) {
  return contrastive_loss_from_sim(t, cosine_similarity_matrix(t, h, g), tau, red);
}

Var mixed_loss(Tape& t, Var l_c, Var l_g, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw LambdaOutOfRange("mixed_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (!t.value(l_g).is_scalar() || !t.value(l_c).is_scalar()) {
    throw ShapeMismatch("mixed_loss: losses must be scalars");
  }
  if (lambda == 0.0) return l_g;
  if (lambda == 1.0) return l_c;
  return axpby(t, lambda, l_c, 1.0 - lambda, l_g);
}

AlignmentDiagnostics alignment_diagnostics(const Tensor& sim,
                                           const std::vector<std::vector<int>>& word_ids) {
  AlignmentDiagnostics d;
  const int64_t n = sim.rows();
  if (n == 0) return d;
  double diag = 0.0, off = 0.0;
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    diag += sim.at(i, i);
    int64_t best = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) off += sim.at(i, j);
      if (sim.at(i, j) > sim.at(i, best)) best = j;
    }
    if (best == i) ++hits;
  }
  d.diag_mean_sim = diag / static_cast<double>(n);
  d.offdiag_mean_sim = n > 1 ? off / static_cast<double>(n * (n - 1)) : 0.0;
  d.retrieval_accuracy = static_cast<double>(hits) / static_cast<double>(n);
  if (!word_ids.empty()) {
    int64_t dups = 0;
    for (size_t i = 0; i < word_ids.size(); ++i) {
      for (size_t j = 0; j < word_ids.size(); ++j) {
        if (i != j && word_ids[i] == word_ids[j]) {
          ++dups;
          break;
        }
      }
    }
    d.duplicate_rate = static_cast<double>(dups) / static_cast<double>(word_ids.size());
  }
  return d;
}

BatchLossResult batch_loss(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
                           const Batch& batch, double lambda, const ContrastiveConfig& ccfg,
                           bool want_diagnostics, DropoutState dropout) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw LambdaOutOfRange("batch_loss: lambda must lie in [0, 1]");
  }
  BatchLossResult out;

  Var enc_h = encode(t, p, cfg, batch, dropout);
  Var dec_g = decode_teacher_forced(t, p, cfg, enc_h, batch, dropout);
  Var logits = lm_head(t, p, cfg, dec_g);
  Var l_g = generation_loss(t, logits, batch.decoder_gold, batch.decoder_pad_mask);
  out.bundle.l_g = t.value(l_g).values[0];

  const bool need_contrastive = lambda > 0.0 || want_diagnostics;
  if (!need_contrastive) {
    out.loss = l_g;
    out.bundle.l_final = out.bundle.l_g;
    return out;
  }

  auto target_rows = extract_target(t, enc_h, batch.target_mask, batch.n, batch.enc_len);
  PooledPair hg = pooled_representations(t, target_rows, dec_g, batch.decoder_pad_mask, batch.n,
                                         batch.dec_len, ccfg.pooling);
  Var sim = cosine_similarity_matrix(t, hg.h, hg.g);
  Var l_c = contrastive_loss_from_sim(t, sim, ccfg.tau, ccfg.reduction);

  out.bundle.has_contrastive = true;
  out.bundle.l_c = t.value(l_c).values[0];
  out.bundle.similarity = t.value(sim);
  out.bundle.diag = alignment_diagnostics(out.bundle.similarity, batch.word_ids);

  out.loss = mixed_loss(t, l_c, l_g, lambda);
  out.bundle.l_final = t.value(out.loss).values[0];
  return out;
}

}  // namespace defgen
