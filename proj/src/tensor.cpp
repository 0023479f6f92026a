#include "defgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "defgen/rng.hpp"

namespace defgen {

namespace debug {
bool corrupt_matmul_backward = false;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

static int64_t product(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> s) {
  Tensor t;
  t.values.assign(static_cast<size_t>(product(s)), 0.0);
  t.shape = std::move(s);
  return t;
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
  Tensor t = zeros(std::move(s));
  std::fill(t.values.begin(), t.values.end(), v);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<double> vals) {
  if (product(s) != static_cast<int64_t>(vals.size())) {
    throw ShapeMismatch("Tensor::from: value count does not match shape");
  }
  Tensor t;
  t.shape = std::move(s);
  t.values = std::move(vals);
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(values.size()); }

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= size()) throw Error("invalid Var handle");
  return v.id;
}

Var Tape::leaf(Tensor value) {
  return add_node(std::move(value), {}, nullptr, "leaf");
}

Var Tape::add_node(Tensor value, std::vector<int> parents, BackwardFn fn,
                   const char* op_name) {
  if (backward_done_) {
    throw TapeReused(std::string("tape already consumed by backward (op: ") + op_name + ")");
  }
  if (check_finite && !value.all_finite()) {
    throw NonFiniteValue(std::string("non-finite value produced by op: ") + op_name);
  }
  nodes_.push_back(Node{std::move(parents), std::move(fn)});
  values_.push_back(std::move(value));
  return Var{size() - 1};
}

const Tensor& Tape::grad(Var v) const {
  if (!backward_done_) throw Error("grad requested before backward()");
  return grads_[static_cast<size_t>(check(v))];
}

void Tape::backward(Var loss) {
  const int root = check(loss);
  if (backward_done_) throw TapeReused("backward() called twice on one tape");
  if (!values_[static_cast<size_t>(root)].is_scalar()) {
    throw NonScalarLoss("backward() requires a scalar loss");
  }
  backward_done_ = true;

  // Mark ancestors of the loss so side branches (diagnostics) cost nothing.
  std::vector<uint8_t> needed(nodes_.size(), 0);
  needed[static_cast<size_t>(root)] = 1;
  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    for (int p : nodes_[static_cast<size_t>(i)].parents) needed[static_cast<size_t>(p)] = 1;
  }

  grads_.resize(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i] = Tensor::zeros(values_[i].shape);
  }
  grads_[static_cast<size_t>(root)].values[0] = 1.0;

  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    auto& fn = nodes_[static_cast<size_t>(i)].backward;
    if (fn) fn(*this, i);
  }
}

// ---------------------------------------------------------------------------
// gemm helper: C += op(A) * op(B), with op(A) [m x k], op(B) [k x n]
// ---------------------------------------------------------------------------

static void gemm_acc(const double* a, const double* b, double* c, int64_t m,
                     int64_t k, int64_t n, bool ta, bool tb) {
  if (!ta && !tb) {
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (int64_t l = 0; l < k; ++l) {
        const double av = arow[l];
        const double* brow = b + l * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    // B stored [n x k]
    for (int64_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
        crow[j] += acc;
      }
    }
  } else if (ta && !tb) {
    // A stored [k x m]
    for (int64_t l = 0; l < k; ++l) {
      const double* arow = a + l * m;
      const double* brow = b + l * n;
      for (int64_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    // A stored [k x m], B stored [n x k]; rare path
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (int64_t l = 0; l < k; ++l) acc += a[l * m + i] * brow[l];
        crow[j] += acc;
      }
    }
  }
}

static void require_rank2(const Tensor& t, const char* who) {
  if (t.shape.size() != 2) throw ShapeMismatch(std::string(who) + ": rank-2 tensor required");
}

static void acc_into(Tensor& dst, const Tensor& src) {
  for (size_t i = 0; i < dst.values.size(); ++i) dst.values[i] += src.values[i];
}

// ---------------------------------------------------------------------------
// elementwise / affine ops
// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeMismatch("add: shapes differ");
  Tensor out = av;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv.values[i];
  const int ai = a.id, bi = b.id;
  return t.add_node(std::move(out), {ai, bi},
                    [ai, bi](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      acc_into(tp.grad_buffer(ai), g);
                      acc_into(tp.grad_buffer(bi), g);
                    },
                    "add");
}

Var add_bias(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  require_rank2(xv, "add_bias");
  const int64_t m = xv.rows(), n = xv.cols();
  if (bv.numel() != n) throw ShapeMismatch("add_bias: bias width mismatch");
  Tensor out = xv;
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out.values[static_cast<size_t>(i * n + j)] += bv.values[static_cast<size_t>(j)];
  }
  const int xi = x.id, bi = bias.id;
  return t.add_node(std::move(out), {xi, bi},
                    [xi, bi, m, n](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      acc_into(tp.grad_buffer(xi), g);
                      Tensor& db = tp.grad_buffer(bi);
                      for (int64_t i = 0; i < m; ++i) {
                        for (int64_t j = 0; j < n; ++j) {
                          db.values[static_cast<size_t>(j)] += g.values[static_cast<size_t>(i * n + j)];
                        }
                      }
                    },
                    "add_bias");
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeMismatch("mul: shapes differ");
  Tensor out = av;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= bv.values[i];
  const int ai = a.id, bi = b.id;
  return t.add_node(std::move(out), {ai, bi},
                    [ai, bi](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      const Tensor& av2 = tp.node_value(ai);
                      const Tensor& bv2 = tp.node_value(bi);
                      Tensor& da = tp.grad_buffer(ai);
                      Tensor& db = tp.grad_buffer(bi);
                      for (size_t i = 0; i < g.values.size(); ++i) {
                        da.values[i] += g.values[i] * bv2.values[i];
                        db.values[i] += g.values[i] * av2.values[i];
                      }
                    },
                    "mul");
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (double& v : out.values) v *= c;
  const int ai = a.id;
  return t.add_node(std::move(out), {ai},
                    [ai, c](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& da = tp.grad_buffer(ai);
                      for (size_t i = 0; i < g.values.size(); ++i) da.values[i] += c * g.values[i];
                    },
                    "scale");
}

Var add_constant(Tape& t, Var x, const Tensor& c) {
  const Tensor& xv = t.value(x);
  if (!xv.same_shape(c)) throw ShapeMismatch("add_constant: shapes differ");
  Tensor out = xv;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += c.values[i];
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi](Tape& tp, int self) { acc_into(tp.grad_buffer(xi), tp.grad_buffer(self)); },
                    "add_constant");
}

Var mul_constant(Tape& t, Var x, const Tensor& m) {
  const Tensor& xv = t.value(x);
  if (!xv.same_shape(m)) throw ShapeMismatch("mul_constant: shapes differ");
  Tensor out = xv;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= m.values[i];
  const int xi = x.id;
  Tensor mask = m;
  return t.add_node(std::move(out), {xi},
                    [xi, mask = std::move(mask)](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      for (size_t i = 0; i < g.values.size(); ++i) dx.values[i] += g.values[i] * mask.values[i];
                    },
                    "mul_constant");
}

Var axpby(Tape& t, double alpha, Var a, double beta, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeMismatch("axpby: shapes differ");
  Tensor out = Tensor::zeros(av.shape);
  for (size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = alpha * av.values[i] + beta * bv.values[i];
  }
  const int ai = a.id, bi = b.id;
  return t.add_node(std::move(out), {ai, bi},
                    [ai, bi, alpha, beta](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& da = tp.grad_buffer(ai);
                      Tensor& db = tp.grad_buffer(bi);
                      for (size_t i = 0; i < g.values.size(); ++i) {
                        da.values[i] += alpha * g.values[i];
                        db.values[i] += beta * g.values[i];
                      }
                    },
                    "axpby");
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b, bool trans_a, bool trans_b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const int64_t m = trans_a ? av.cols() : av.rows();
  const int64_t k = trans_a ? av.rows() : av.cols();
  const int64_t kb = trans_b ? bv.cols() : bv.rows();
  const int64_t n = trans_b ? bv.rows() : bv.cols();
  if (k != kb) throw ShapeMismatch("matmul: inner dimensions disagree");

  Tensor out = Tensor::zeros({m, n});
  gemm_acc(av.values.data(), bv.values.data(), out.values.data(), m, k, n, trans_a, trans_b);

  const int ai = a.id, bi = b.id;
  return t.add_node(
      std::move(out), {ai, bi},
      [ai, bi, m, k, n, trans_a, trans_b](Tape& tp, int self) {
        const Tensor& g = tp.grad_buffer(self);  // [m x n]
        const Tensor& A = tp.node_value(ai);
        const Tensor& B = tp.node_value(bi);
        Tensor dA = Tensor::zeros(A.shape);
        Tensor dB = Tensor::zeros(B.shape);
        // dA' = G * B'^T, dB' = A'^T * G, un-transposed as stored.
        if (!trans_a) {
          gemm_acc(g.values.data(), B.values.data(), dA.values.data(), m, n, k, false, !trans_b);
        } else {
          // dA (stored [k x m]) = B' * G^T
          if (!trans_b) {
            gemm_acc(B.values.data(), g.values.data(), dA.values.data(), k, n, m, false, true);
          } else {
            gemm_acc(B.values.data(), g.values.data(), dA.values.data(), k, n, m, true, true);
          }
        }
        if (!trans_b) {
          gemm_acc(A.values.data(), g.values.data(), dB.values.data(), k, m, n, !trans_a, false);
        } else {
          // dB (stored [n x k]) = G^T * A'
          if (!trans_a) {
            gemm_acc(g.values.data(), A.values.data(), dB.values.data(), n, m, k, true, false);
          } else {
            gemm_acc(g.values.data(), A.values.data(), dB.values.data(), n, m, k, true, true);
          }
        }
        if (debug::corrupt_matmul_backward) {
          for (double& v : dA.values) v *= 1.1;
        }
        acc_into(tp.grad_buffer(ai), dA);
        acc_into(tp.grad_buffer(bi), dB);
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

Var embedding(Tape& t, Var table, const std::vector<int>& ids) {
  const Tensor& E = t.value(table);
  require_rank2(E, "embedding");
  const int64_t V = E.rows(), d = E.cols();
  for (int id : ids) {
    if (id < 0 || id >= V) throw ShapeMismatch("embedding: token id out of range");
  }
  const int64_t L = static_cast<int64_t>(ids.size());
  Tensor out = Tensor::zeros({L, d});
  for (int64_t i = 0; i < L; ++i) {
    const double* src = E.values.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
    std::copy(src, src + d, out.values.data() + i * d);
  }
  const int ti = table.id;
  std::vector<int> ids_copy = ids;
  return t.add_node(std::move(out), {ti},
                    [ti, d, ids_copy = std::move(ids_copy)](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dE = tp.grad_buffer(ti);
                      for (size_t i = 0; i < ids_copy.size(); ++i) {
                        double* dst = dE.values.data() + static_cast<int64_t>(ids_copy[i]) * d;
                        const double* src = g.values.data() + static_cast<int64_t>(i) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                      }
                    },
                    "embedding");
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(bias);
  require_rank2(xv, "layer_norm");
  const int64_t m = xv.rows(), n = xv.cols();
  if (gv.numel() != n || bv.numel() != n) throw ShapeMismatch("layer_norm: gain/bias width mismatch");

  Tensor out = Tensor::zeros({m, n});
  Tensor xhat = Tensor::zeros({m, n});
  std::vector<double> inv_std(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* row = xv.values.data() + i * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat.values[static_cast<size_t>(i * n + j)] = xh;
      out.values[static_cast<size_t>(i * n + j)] =
          xh * gv.values[static_cast<size_t>(j)] + bv.values[static_cast<size_t>(j)];
    }
  }

  const int xi = x.id, gi = gain.id, bi = bias.id;
  return t.add_node(
      std::move(out), {xi, gi, bi},
      [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
        const Tensor& g = tp.grad_buffer(self);
        const Tensor& gainv = tp.node_value(gi);
        Tensor& dx = tp.grad_buffer(xi);
        Tensor& dgain = tp.grad_buffer(gi);
        Tensor& dbias = tp.grad_buffer(bi);
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = g.values.data() + i * n;
          const double* xhrow = xhat.values.data() + i * n;
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < n; ++j) {
            const double dxh = grow[j] * gainv.values[static_cast<size_t>(j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhrow[j];
            dgain.values[static_cast<size_t>(j)] += grow[j] * xhrow[j];
            dbias.values[static_cast<size_t>(j)] += grow[j];
          }
          mean_dxh /= static_cast<double>(n);
          mean_dxh_xh /= static_cast<double>(n);
          const double is = inv_std[static_cast<size_t>(i)];
          double* dxrow = dx.values.data() + i * n;
          for (int64_t j = 0; j < n; ++j) {
            const double dxh = grow[j] * gainv.values[static_cast<size_t>(j)];
            dxrow[j] += is * (dxh - mean_dxh - xhrow[j] * mean_dxh_xh);
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// gelu (exact erf form)
// ---------------------------------------------------------------------------

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  for (double& v : out.values) {
    v = v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
  }
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      const Tensor& xv2 = tp.node_value(xi);
                      Tensor& dx = tp.grad_buffer(xi);
                      constexpr double inv_sqrt_2pi = 0.3989422804014327;
                      for (size_t i = 0; i < g.values.size(); ++i) {
                        const double v = xv2.values[i];
                        const double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                        dx.values[i] += g.values[i] * (phi + v * pdf);
                      }
                    },
                    "gelu");
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

static Tensor softmax_forward(const Tensor& xv, const std::vector<uint8_t>* keep) {
  const int64_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* row = xv.values.data() + i * n;
    double* orow = out.values.data() + i * n;
    double mx = -HUGE_VAL;
    int64_t kept = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (keep && !(*keep)[static_cast<size_t>(i * n + j)]) continue;
      mx = std::max(mx, row[j]);
      ++kept;
    }
    if (keep && kept == 0) throw AllMasked("masked_softmax_rows: row has no admissible column");
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      if (keep && !(*keep)[static_cast<size_t>(i * n + j)]) continue;
      const double e = std::exp(row[j] - mx);
      orow[j] = e;
      denom += e;
    }
    for (int64_t j = 0; j < n; ++j) {
      if (keep && !(*keep)[static_cast<size_t>(i * n + j)]) {
        orow[j] = 0.0;  // exact zero: masked keys never leak into the mix
      } else {
        orow[j] /= denom;
      }
    }
  }
  return out;
}

static Tape::BackwardFn softmax_backward(int xi, int64_t m, int64_t n) {
  return [xi, m, n](Tape& tp, int self) {
    const Tensor& g = tp.grad_buffer(self);
    const Tensor& y = tp.node_value(self);
    Tensor& dx = tp.grad_buffer(xi);
    for (int64_t i = 0; i < m; ++i) {
      const double* grow = g.values.data() + i * n;
      const double* yrow = y.values.data() + i * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += grow[j] * yrow[j];
      double* dxrow = dx.values.data() + i * n;
      for (int64_t j = 0; j < n; ++j) dxrow[j] += yrow[j] * (grow[j] - dot);
    }
  };
}

Var softmax_rows(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "softmax_rows");
  Tensor out = softmax_forward(xv, nullptr);
  return t.add_node(std::move(out), {x.id}, softmax_backward(x.id, xv.rows(), xv.cols()),
                    "softmax_rows");
}

Var masked_softmax_rows(Tape& t, Var x, const std::vector<uint8_t>& keep) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "masked_softmax_rows");
  if (static_cast<int64_t>(keep.size()) != xv.numel()) {
    throw ShapeMismatch("masked_softmax_rows: mask size mismatch");
  }
  Tensor out = softmax_forward(xv, &keep);
  return t.add_node(std::move(out), {x.id}, softmax_backward(x.id, xv.rows(), xv.cols()),
                    "masked_softmax_rows");
}

// ---------------------------------------------------------------------------
// fused cross entropy
// ---------------------------------------------------------------------------

Var cross_entropy_rows(Tape& t, Var logits, const std::vector<int>& gold,
                       const std::vector<uint8_t>& include, Reduction red) {
  const Tensor& lv = t.value(logits);
  require_rank2(lv, "cross_entropy_rows");
  const int64_t R = lv.rows(), V = lv.cols();
  if (static_cast<int64_t>(gold.size()) != R || static_cast<int64_t>(include.size()) != R) {
    throw ShapeMismatch("cross_entropy_rows: gold/include length mismatch");
  }
  int64_t count = 0;
  Tensor probs = Tensor::zeros({R, V});
  double total = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    if (!include[static_cast<size_t>(r)]) continue;
    const int gid = gold[static_cast<size_t>(r)];
    if (gid < 0 || gid >= V) throw ShapeMismatch("cross_entropy_rows: gold id out of range");
    const double* row = lv.values.data() + r * V;
    double mx = row[0];
    for (int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    double* prow = probs.values.data() + r * V;
    for (int64_t j = 0; j < V; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (int64_t j = 0; j < V; ++j) prow[j] /= denom;
    total += (mx + std::log(denom)) - row[gid];  // lse - gold logit
    ++count;
  }
  if (count == 0) throw AllPadded("cross_entropy_rows: no included rows");
  if (red == Reduction::mean) total /= static_cast<double>(count);

  const int li = logits.id;
  std::vector<int> gold_c = gold;
  std::vector<uint8_t> inc_c = include;
  return t.add_node(
      Tensor::scalar(total), {li},
      [li, R, V, count, red, gold_c = std::move(gold_c), inc_c = std::move(inc_c),
       probs = std::move(probs)](Tape& tp, int self) {
        const double go = tp.grad_buffer(self).values[0];
        const double w = (red == Reduction::mean) ? go / static_cast<double>(count) : go;
        Tensor& dl = tp.grad_buffer(li);
        for (int64_t r = 0; r < R; ++r) {
          if (!inc_c[static_cast<size_t>(r)]) continue;
          const double* prow = probs.values.data() + r * V;
          double* drow = dl.values.data() + r * V;
          for (int64_t j = 0; j < V; ++j) drow[j] += w * prow[j];
          drow[gold_c[static_cast<size_t>(r)]] -= w;
        }
      },
      "cross_entropy_rows");
}

// ---------------------------------------------------------------------------
// slicing / concatenation
// ---------------------------------------------------------------------------

Var slice_rows(Tape& t, Var x, int64_t r0, int64_t r1) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "slice_rows");
  const int64_t n = xv.cols();
  if (r0 < 0 || r1 > xv.rows() || r0 >= r1) throw ShapeMismatch("slice_rows: bad range");
  Tensor out = Tensor::zeros({r1 - r0, n});
  std::copy(xv.values.data() + r0 * n, xv.values.data() + r1 * n, out.values.data());
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi, r0, n](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      double* dst = dx.values.data() + r0 * n;
                      for (size_t i = 0; i < g.values.size(); ++i) dst[i] += g.values[i];
                    },
                    "slice_rows");
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  const int64_t n = t.value(parts[0]).cols();
  int64_t m = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    require_rank2(pv, "concat_rows");
    if (pv.cols() != n) throw ShapeMismatch("concat_rows: column widths differ");
    m += pv.rows();
  }
  Tensor out = Tensor::zeros({m, n});
  std::vector<int> ids;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    std::copy(pv.values.begin(), pv.values.end(), out.values.data() + off * n);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += pv.rows();
  }
  std::vector<int> parents = ids;
  return t.add_node(std::move(out), std::move(parents),
                    [ids = std::move(ids), offsets = std::move(offsets), n](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      for (size_t k = 0; k < ids.size(); ++k) {
                        Tensor& dp = tp.grad_buffer(ids[k]);
                        const double* src = g.values.data() + offsets[k] * n;
                        for (size_t i = 0; i < dp.values.size(); ++i) dp.values[i] += src[i];
                      }
                    },
                    "concat_rows");
}

Var slice_cols(Tape& t, Var x, int64_t c0, int64_t c1) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "slice_cols");
  const int64_t m = xv.rows(), n = xv.cols();
  if (c0 < 0 || c1 > n || c0 >= c1) throw ShapeMismatch("slice_cols: bad range");
  const int64_t w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (int64_t i = 0; i < m; ++i) {
    std::copy(xv.values.data() + i * n + c0, xv.values.data() + i * n + c1,
              out.values.data() + i * w);
  }
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi, c0, m, n, w](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      for (int64_t i = 0; i < m; ++i) {
                        const double* src = g.values.data() + i * w;
                        double* dst = dx.values.data() + i * n + c0;
                        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                      }
                    },
                    "slice_cols");
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  const int64_t m = t.value(parts[0]).rows();
  int64_t n = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    require_rank2(pv, "concat_cols");
    if (pv.rows() != m) throw ShapeMismatch("concat_cols: row counts differ");
    n += pv.cols();
  }
  Tensor out = Tensor::zeros({m, n});
  std::vector<int> ids;
  std::vector<int64_t> offsets;
  std::vector<int64_t> widths;
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    const int64_t w = pv.cols();
    for (int64_t i = 0; i < m; ++i) {
      std::copy(pv.values.data() + i * w, pv.values.data() + (i + 1) * w,
                out.values.data() + i * n + off);
    }
    ids.push_back(p.id);
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  std::vector<int> parents = ids;
  return t.add_node(
      std::move(out), std::move(parents),
      [ids = std::move(ids), offsets = std::move(offsets), widths = std::move(widths), m,
       n](Tape& tp, int self) {
        const Tensor& g = tp.grad_buffer(self);
        for (size_t k = 0; k < ids.size(); ++k) {
          Tensor& dp = tp.grad_buffer(ids[k]);
          const int64_t w = widths[k];
          for (int64_t i = 0; i < m; ++i) {
            const double* src = g.values.data() + i * n + offsets[k];
            double* dst = dp.values.data() + i * w;
            for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
      },
      "concat_cols");
}

// ---------------------------------------------------------------------------
// normalization / pooling / similarity
// ---------------------------------------------------------------------------

Var rows_l2_normalize(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "rows_l2_normalize");
  const int64_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> norms(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* row = xv.values.data() + i * n;
    double ss = 0.0;
    for (int64_t j = 0; j < n; ++j) ss += row[j] * row[j];
    const double norm = std::sqrt(ss);
    if (norm < 1e-12) throw ZeroNorm("rows_l2_normalize: zero-norm row (degenerate representation)");
    norms[static_cast<size_t>(i)] = norm;
    for (int64_t j = 0; j < n; ++j) out.values[static_cast<size_t>(i * n + j)] = row[j] / norm;
  }
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi, m, n, norms = std::move(norms)](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      const Tensor& y = tp.node_value(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      for (int64_t i = 0; i < m; ++i) {
                        const double* grow = g.values.data() + i * n;
                        const double* yrow = y.values.data() + i * n;
                        double dot = 0.0;
                        for (int64_t j = 0; j < n; ++j) dot += grow[j] * yrow[j];
                        const double inv = 1.0 / norms[static_cast<size_t>(i)];
                        double* dxrow = dx.values.data() + i * n;
                        for (int64_t j = 0; j < n; ++j) {
                          dxrow[j] += (grow[j] - yrow[j] * dot) * inv;
                        }
                      }
                    },
                    "rows_l2_normalize");
}

static int64_t count_included(const std::vector<uint8_t>& inc) {
  int64_t k = 0;
  for (uint8_t b : inc) k += (b != 0);
  return k;
}

Var max_pool_rows(Tape& t, Var x, const std::vector<uint8_t>& include) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "max_pool_rows");
  const int64_t m = xv.rows(), n = xv.cols();
  if (static_cast<int64_t>(include.size()) != m) throw ShapeMismatch("max_pool_rows: mask length mismatch");
  if (count_included(include) == 0) throw AllMasked("max_pool_rows: all rows masked");

  Tensor out = Tensor::zeros({1, n});
  std::vector<int64_t> argmax(static_cast<size_t>(n), -1);
  for (int64_t j = 0; j < n; ++j) {
    double best = -HUGE_VAL;
    int64_t bi = -1;
    for (int64_t i = 0; i < m; ++i) {
      if (!include[static_cast<size_t>(i)]) continue;
      const double v = xv.at(i, j);
      if (v > best) {  // strict: first maximal row wins ties
        best = v;
        bi = i;
      }
    }
    out.values[static_cast<size_t>(j)] = best;
    argmax[static_cast<size_t>(j)] = bi;
  }
  const int xi = x.id;
  return t.add_node(std::move(out), {xi},
                    [xi, n, argmax = std::move(argmax)](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      for (int64_t j = 0; j < n; ++j) {
                        dx.at(argmax[static_cast<size_t>(j)], j) += g.values[static_cast<size_t>(j)];
                      }
                    },
                    "max_pool_rows");
}

Var mean_pool_rows(Tape& t, Var x, const std::vector<uint8_t>& include) {
  const Tensor& xv = t.value(x);
  require_rank2(xv, "mean_pool_rows");
  const int64_t m = xv.rows(), n = xv.cols();
  if (static_cast<int64_t>(include.size()) != m) throw ShapeMismatch("mean_pool_rows: mask length mismatch");
  const int64_t k = count_included(include);
  if (k == 0) throw AllMasked("mean_pool_rows: all rows masked");

  Tensor out = Tensor::zeros({1, n});
  for (int64_t i = 0; i < m; ++i) {
    if (!include[static_cast<size_t>(i)]) continue;
    for (int64_t j = 0; j < n; ++j) out.values[static_cast<size_t>(j)] += xv.at(i, j);
  }
  for (double& v : out.values) v /= static_cast<double>(k);

  const int xi = x.id;
  std::vector<uint8_t> inc_c = include;
  return t.add_node(std::move(out), {xi},
                    [xi, m, n, k, inc_c = std::move(inc_c)](Tape& tp, int self) {
                      const Tensor& g = tp.grad_buffer(self);
                      Tensor& dx = tp.grad_buffer(xi);
                      const double w = 1.0 / static_cast<double>(k);
                      for (int64_t i = 0; i < m; ++i) {
                        if (!inc_c[static_cast<size_t>(i)]) continue;
                        for (int64_t j = 0; j < n; ++j) {
                          dx.at(i, j) += w * g.values[static_cast<size_t>(j)];
                        }
                      }
                    },
                    "mean_pool_rows");
}

Var cosine_sim(Tape& t, Var u, Var v) {
  const Tensor& uv = t.value(u);
  const Tensor& vv = t.value(v);
  if (uv.numel() != vv.numel()) throw ShapeMismatch("cosine_sim: lengths differ");
  double dot = 0.0, uu = 0.0, ww = 0.0;
  for (size_t i = 0; i < uv.values.size(); ++i) {
    dot += uv.values[i] * vv.values[i];
    uu += uv.values[i] * uv.values[i];
    ww += vv.values[i] * vv.values[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(ww);
  if (nu < 1e-12 || nv < 1e-12) throw ZeroNorm("cosine_sim: zero-norm vector");
  const double sim = dot / (nu * nv);

  const int ui = u.id, vi = v.id;
  return t.add_node(Tensor::scalar(sim), {ui, vi},
                    [ui, vi, nu, nv, sim](Tape& tp, int self) {
                      const double g = tp.grad_buffer(self).values[0];
                      const Tensor& uv2 = tp.node_value(ui);
                      const Tensor& vv2 = tp.node_value(vi);
                      Tensor& du = tp.grad_buffer(ui);
                      Tensor& dv = tp.grad_buffer(vi);
                      for (size_t i = 0; i < uv2.values.size(); ++i) {
                        du.values[i] += g * (vv2.values[i] / (nu * nv) - sim * uv2.values[i] / (nu * nu));
                        dv.values[i] += g * (uv2.values[i] / (nu * nv) - sim * vv2.values[i] / (nv * nv));
                      }
                    },
                    "cosine_sim");
}

Var sum_all(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.values) s += v;
  const int xi = x.id;
  return t.add_node(Tensor::scalar(s), {xi},
                    [xi](Tape& tp, int self) {
                      const double g = tp.grad_buffer(self).values[0];
                      Tensor& dx = tp.grad_buffer(xi);
                      for (double& v : dx.values) v += g;
                    },
                    "sum_all");
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

FdReport finite_diff_check(const LossFn& f, const std::vector<Tensor>& params,
                           double eps, int max_coords, uint64_t sample_seed) {
  std::vector<Tensor> grads;
  {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(t.leaf(p));
    Var loss = f(t, vars);
    t.backward(loss);
    grads.reserve(vars.size());
    for (Var v : vars) grads.push_back(t.grad(v));
  }

  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(t.leaf(p));
    return t.value(f(t, vars)).values[0];
  };

  std::vector<std::pair<int, int64_t>> coords;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (int64_t ci = 0; ci < params[pi].numel(); ++ci) {
      coords.emplace_back(static_cast<int>(pi), ci);
    }
  }
  if (max_coords > 0 && static_cast<int>(coords.size()) > max_coords) {
    Rng rng(sample_seed);
    rng.shuffle(coords);
    coords.resize(static_cast<size_t>(max_coords));
  }

  FdReport rep;
  std::vector<Tensor> work = params;
  for (auto [pi, ci] : coords) {
    double& slot = work[static_cast<size_t>(pi)].values[static_cast<size_t>(ci)];
    const double orig = slot;
    slot = orig + eps;
    const double fp = eval(work);
    slot = orig - eps;
    const double fm = eval(work);
    slot = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double ad = grads[static_cast<size_t>(pi)].values[static_cast<size_t>(ci)];
    const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
    ++rep.coords_checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = pi;
      rep.worst_coord = ci;
      rep.worst_ad = ad;
      rep.worst_fd = fd;
    }
  }
  return rep;
}

}  // namespace defgen
