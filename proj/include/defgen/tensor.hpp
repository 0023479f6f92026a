#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "defgen/errors.hpp"

namespace defgen {

/// Dense row-major tensor of 64-bit floats.
///
/// 64-bit precision is load-bearing: the whole test suite is driven by
/// finite-difference gradient checks at 1e-6 relative error.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> s);
  static Tensor full(std::vector<int64_t> s, double v);
  static Tensor from(std::vector<int64_t> s, std::vector<double> vals);
  static Tensor scalar(double v) { return from({1}, {v}); }

  int64_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  // rank-2 accessors
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Reduction { mean, sum };

/// Reverse-mode differentiation tape. Nodes are appended in topological
/// order by construction; backward() walks them once in reverse.
class Tape {
 public:
  /// Receives the tape and the node's own id; reads its grad buffer and
  /// accumulates into the parents' buffers.
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node (parameter or input). Gradient accumulates here.
  Var leaf(Tensor value);

  const Tensor& value(Var v) const { return values_[check(v)]; }
  const Tensor& grad(Var v) const;

  /// Reverse pass from a scalar loss. One pass per tape; reuse throws.
  void backward(Var loss);

  int size() const { return static_cast<int>(values_.size()); }
  bool backward_done() const { return backward_done_; }

  /// NaN/Inf trips NonFiniteValue right where it is produced.
  bool check_finite = true;

  // -- used by op implementations --
  Var add_node(Tensor value, std::vector<int> parents, BackwardFn fn, const char* op_name);
  Tensor& grad_buffer(int id) { return grads_[static_cast<size_t>(id)]; }
  const Tensor& node_value(int id) const { return values_[static_cast<size_t>(id)]; }

 private:
  int check(Var v) const;

  struct Node {
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

namespace debug {
/// Test hook: scales matmul's input gradients so the gradient checker
/// has a known defect to detect.
extern bool corrupt_matmul_backward;
}  // namespace debug

// ---------------------------------------------------------------------------
// Differentiable ops. All take the tape first; shapes are validated and
// ShapeMismatch is thrown on disagreement.
// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b);
/// x: [m x n], bias: [1 x n], broadcast over rows.
Var add_bias(Tape& t, Var x, Var bias);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
/// y = x + c with a non-differentiable constant (positional tables).
Var add_constant(Tape& t, Var x, const Tensor& c);
/// y = x .* m with a constant mask (dropout).
Var mul_constant(Tape& t, Var x, const Tensor& m);
/// alpha*a + beta*b, same shapes.
Var axpby(Tape& t, double alpha, Var a, double beta, Var b);

Var matmul(Tape& t, Var a, Var b, bool trans_a = false, bool trans_b = false);

/// Gather rows of an embedding matrix [V x d] by token id.
Var embedding(Tape& t, Var table, const std::vector<int>& ids);

/// Row-wise layer norm with learnable gain/bias ([1 x n] each).
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);

Var gelu(Tape& t, Var x);

/// Row-wise softmax with per-row max subtraction.
Var softmax_rows(Tape& t, Var x);
/// Softmax restricted to mask==true columns; masked outputs are exact 0.0.
/// A row with no admissible column throws AllMasked.
Var masked_softmax_rows(Tape& t, Var x, const std::vector<uint8_t>& keep);

/// Mean (or sum) of per-row -log softmax(logits)[gold], over rows with
/// include!=0, computed via log-sum-exp. Rows excluded contribute nothing.
Var cross_entropy_rows(Tape& t, Var logits, const std::vector<int>& gold,
                       const std::vector<uint8_t>& include, Reduction red);

Var slice_rows(Tape& t, Var x, int64_t r0, int64_t r1);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, Var x, int64_t c0, int64_t c1);
Var concat_cols(Tape& t, const std::vector<Var>& parts);

/// Each row divided by its L2 norm; a norm below 1e-12 throws ZeroNorm.
Var rows_l2_normalize(Tape& t, Var x);

/// Column-wise max over rows with include!=0 -> [1 x d]. Ties route the
/// gradient to the first maximal row. No included row throws AllMasked.
Var max_pool_rows(Tape& t, Var x, const std::vector<uint8_t>& include);
Var mean_pool_rows(Tape& t, Var x, const std::vector<uint8_t>& include);

/// Cosine similarity of two equal-length vectors (any shape, flattened).
Var cosine_sim(Tape& t, Var u, Var v);

Var sum_all(Tape& t, Var x);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Builds the loss on a fresh tape from leaf parameters.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  int worst_param = -1;
  int64_t worst_coord = -1;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
};

/// Central-difference check of reverse-mode gradients.
/// rel err = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|), maxed over
/// coordinates (all of them, or `max_coords` sampled by `sample_seed`).
FdReport finite_diff_check(const LossFn& f, const std::vector<Tensor>& params,
                           double eps = 1e-5, int max_coords = 0,
                           uint64_t sample_seed = 0);

}  // namespace defgen
