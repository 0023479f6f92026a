#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defgen/model.hpp"
#include "defgen/tensor.hpp"

namespace defgen {

enum class PoolingKind { max, mean };

PoolingKind parse_pooling(const std::string& name);
std::string pooling_name(PoolingKind k);

struct ContrastiveConfig {
  double tau = 0.1;                       // the paper leaves τ unreported
  PoolingKind pooling = PoolingKind::max;
  Reduction reduction = Reduction::mean;  // sum reproduces Eq. 8 as typeset

  void validate() const;
};

/// Mean negative log-likelihood of the gold tokens over non-pad positions,
/// computed via log-sum-exp. Throws AllPadded when nothing is included.
Var generation_loss(Tape& t, Var logits, const std::vector<int>& gold,
                    const std::vector<uint8_t>& pad_mask, Reduction red = Reduction::mean);

/// Pools the per-sample target rows (h) and the non-pad decoder rows (g)
/// into [N x d] matrices.
struct PooledPair {
  Var h;
  Var g;
};
PooledPair pooled_representations(Tape& t, const std::vector<Var>& target_rows, Var dec_g,
                                  const std::vector<uint8_t>& dec_pad_mask, int64_t n,
                                  int64_t t_len, PoolingKind pooling);

/// Cosine similarity of every (h_i, g_j) pair: [N x N].
Var cosine_similarity_matrix(Tape& t, Var h, Var g);

/// In-batch InfoNCE over rows of a precomputed similarity matrix.
/// Row sums and the batch reduction use canonical (sorted) accumulation,
/// so jointly permuting rows and columns leaves the value bit-identical.
Var contrastive_loss_from_sim(Tape& t, Var sim, double tau, Reduction red);

/// L_C over pooled representations: -log softmax(sim(h_i, g_.)/tau)[i].
Var contrastive_loss(Tape& t, Var h, Var g, double tau, Reduction red);

/// lambda*L_C + (1-lambda)*L_G. The endpoints return the input Var itself,
/// so lambda = 0 is bit-identical to pure generation training.
Var mixed_loss(Tape& t, Var l_c, Var l_g, double lambda);

struct AlignmentDiagnostics {
  double diag_mean_sim = 0.0;
  double offdiag_mean_sim = 0.0;
  double retrieval_accuracy = 0.0;  // argmax_j sim(i, j) == i
  double duplicate_rate = 0.0;      // in-batch duplicate targets
};

AlignmentDiagnostics alignment_diagnostics(const Tensor& sim,
                                           const std::vector<std::vector<int>>& word_ids = {});

struct LossBundle {
  double l_g = 0.0;
  double l_c = 0.0;
  double l_final = 0.0;
  bool has_contrastive = false;
  Tensor similarity;  // N x N when has_contrastive
  AlignmentDiagnostics diag;
};

struct BatchLossResult {
  Var loss;  // run backward on this
  LossBundle bundle;
};

/// Full forward pass over one batch: encode, decode, LM head, L_G, and —
/// when lambda > 0 or diagnostics are requested — the pooled contrastive
/// term. With lambda == 0 and no diagnostics the contrastive graph is not
/// built at all, which keeps the parameter trajectory bit-identical to
/// generation-only training.
BatchLossResult batch_loss(Tape& t, const ParamHandles& p, const ModelConfig& cfg,
                           const Batch& batch, double lambda, const ContrastiveConfig& ccfg,
                           bool want_diagnostics = false, DropoutState dropout = {});

}  // namespace defgen
