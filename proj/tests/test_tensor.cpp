#include <cmath>
#include <vector>

#include "defgen/rng.hpp"
#include "defgen/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace defgen;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {

constexpr double kOpTol = 1e-6;

double fd_on(const LossFn& f, const std::vector<Tensor>& params) {
  return finite_diff_check(f, params).max_rel_err;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed product") {
  Tape t;
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(1);
  Tensor m = random_tensor({3, 4}, rng);
  Var out = matmul(t, t.leaf(eye), t.leaf(m));
  CHECK(t.value(out).values == m.values);

  Var prod = matmul(t, t.leaf(Tensor::from({2, 2}, {1, 2, 3, 4})),
                    t.leaf(Tensor::from({2, 1}, {1, 1})));
  CHECK(t.value(prod).values == std::vector<double>{3.0, 7.0});
}

TEST_CASE("matmul shape mismatch") {
  Tape t;
  Var a = t.leaf(Tensor::zeros({2, 3}));
  Var b = t.leaf(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(matmul(t, a, b), ShapeMismatch);
}

TEST_CASE("matmul gradient of sum(A*B) vs finite differences") {
  Rng rng(42);
  std::vector<Tensor> params = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& p) {
    return sum_all(t, matmul(t, p[0], p[1]));
  };
  CHECK(fd_on(f, params) <= kOpTol);
}

TEST_CASE("matmul gradients for every transpose combination") {
  Rng rng(43);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      std::vector<Tensor> params = {
          ta ? random_tensor({4, 3}, rng) : random_tensor({3, 4}, rng),
          tb ? random_tensor({2, 4}, rng) : random_tensor({4, 2}, rng)};
      auto f = [ta, tb](Tape& t, const std::vector<Var>& p) {
        return weighted_sum(t, matmul(t, p[0], p[1], ta, tb));
      };
      CAPTURE(ta);
      CAPTURE(tb);
      CHECK(fd_on(f, params) <= kOpTol);
    }
  }
}

TEST_CASE("softmax rows: uniform, stability, normalization") {
  Tape t;
  Var u = softmax_rows(t, t.leaf(Tensor::zeros({1, 4})));
  for (double v : t.value(u).values) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Var s = softmax_rows(t, t.leaf(Tensor::from({1, 2}, {1000.0, 0.0})));
  CHECK(t.value(s).values[0] == doctest::Approx(1.0));
  CHECK(t.value(s).values[1] == doctest::Approx(0.0));

  Rng rng(5);
  Var r = softmax_rows(t, t.leaf(random_tensor({6, 9}, rng, -30, 30)));
  const Tensor& rv = t.value(r);
  for (int64_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 9; ++j) {
      CHECK(rv.at(i, j) > 0.0);
      sum += rv.at(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax gradient vs finite differences on 3x5 input") {
  Rng rng(6);
  std::vector<Tensor> params = {random_tensor({3, 5}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& p) {
    return weighted_sum(t, softmax_rows(t, p[0]));
  };
  CHECK(fd_on(f, params) <= kOpTol);
}

TEST_CASE("masked softmax: exact zeros on masked columns, AllMasked error") {
  Tape t;
  std::vector<uint8_t> keep = {1, 1, 0, 1, 0, 0};
  Var y = masked_softmax_rows(t, t.leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6})), keep);
  const Tensor& yv = t.value(y);
  CHECK(yv.at(0, 2) == 0.0);
  CHECK(yv.at(1, 1) == 0.0);
  CHECK(yv.at(1, 2) == 0.0);
  CHECK(yv.at(0, 0) + yv.at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(yv.at(1, 0) == 1.0);

  std::vector<uint8_t> none = {0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(masked_softmax_rows(t, t.leaf(Tensor::zeros({2, 3})), none), AllMasked);
}

TEST_CASE("cosine similarity closed forms") {
  Tape t;
  Var a = cosine_sim(t, t.leaf(Tensor::from({3}, {1, 2, 3})), t.leaf(Tensor::from({3}, {1, 2, 3})));
  CHECK(t.value(a).values[0] == doctest::Approx(1.0).epsilon(1e-15));

  Var b = cosine_sim(t, t.leaf(Tensor::from({2}, {1, 0})), t.leaf(Tensor::from({2}, {0, 1})));
  CHECK(t.value(b).values[0] == 0.0);

  Var c = cosine_sim(t, t.leaf(Tensor::from({2}, {1, 1})), t.leaf(Tensor::from({2}, {-1, -1})));
  CHECK(t.value(c).values[0] == doctest::Approx(-1.0).epsilon(1e-15));

  CHECK_THROWS_AS(cosine_sim(t, t.leaf(Tensor::zeros({3})), t.leaf(Tensor::from({3}, {1, 2, 3}))),
                  ZeroNorm);
}

TEST_CASE("cosine similarity is symmetric and positive-scale invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor u = random_tensor({5}, rng);
    Tensor v = random_tensor({5}, rng);
    const double c = rng.uniform(0.1, 10.0);
    Tensor cu = u;
    for (double& x : cu.values) x *= c;

    Tape t;
    double suv = t.value(cosine_sim(t, t.leaf(u), t.leaf(v))).values[0];
    double svu = t.value(cosine_sim(t, t.leaf(v), t.leaf(u))).values[0];
    double scu = t.value(cosine_sim(t, t.leaf(cu), t.leaf(v))).values[0];
    CHECK(suv == doctest::Approx(svu).epsilon(1e-12));
    CHECK(suv == doctest::Approx(scu).epsilon(1e-12));
    CHECK(suv >= -1.0 - 1e-12);
    CHECK(suv <= 1.0 + 1e-12);
  }
}

TEST_CASE("pooling hand cases and mask contract") {
  Tape t;
  Tensor m = Tensor::from({2, 2}, {1, 5, 3, 2});
  std::vector<uint8_t> all = {1, 1};
  CHECK(t.value(max_pool_rows(t, t.leaf(m), all)).values == std::vector<double>{3, 5});
  CHECK(t.value(mean_pool_rows(t, t.leaf(m), all)).values == std::vector<double>{2, 3.5});

  std::vector<uint8_t> first_only = {1, 0};
  CHECK(t.value(max_pool_rows(t, t.leaf(m), first_only)).values == std::vector<double>{1, 5});
  CHECK(t.value(mean_pool_rows(t, t.leaf(m), first_only)).values == std::vector<double>{1, 5});

  Tensor single = Tensor::from({1, 3}, {4, -2, 7});
  std::vector<uint8_t> one = {1};
  CHECK(t.value(max_pool_rows(t, t.leaf(single), one)).values == single.values);
  CHECK(t.value(mean_pool_rows(t, t.leaf(single), one)).values == single.values);

  std::vector<uint8_t> none = {0, 0};
  CHECK_THROWS_AS(max_pool_rows(t, t.leaf(m), none), AllMasked);
  CHECK_THROWS_AS(mean_pool_rows(t, t.leaf(m), none), AllMasked);
}

TEST_CASE("max pool routes tie gradient to the first maximal row") {
  Tape t;
  Var x = t.leaf(Tensor::from({2, 1}, {2.0, 2.0}));
  std::vector<uint8_t> all = {1, 1};
  Var loss = sum_all(t, max_pool_rows(t, x, all));
  t.backward(loss);
  CHECK(t.grad(x).values == std::vector<double>{1.0, 0.0});
}

TEST_CASE("backward linearity: grad of summed losses equals summed grads") {
  Rng rng(8);
  Tensor x0 = random_tensor({3, 3}, rng);
  auto grad_of = [&](int which) {
    Tape t;
    Var x = t.leaf(x0);
    Var a = sum_all(t, gelu(t, x));
    Var b = weighted_sum(t, matmul(t, x, x));
    Var loss = which == 0 ? a : which == 1 ? b : add(t, a, b);
    t.backward(loss);
    return t.grad(x).values;
  };
  auto ga = grad_of(0);
  auto gb = grad_of(1);
  auto gsum = grad_of(2);
  for (size_t i = 0; i < gsum.size(); ++i) {
    CHECK(gsum[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
  }
}

TEST_CASE("tape reuse and non-scalar loss are errors") {
  Tape t;
  Var x = t.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(t.backward(x), NonScalarLoss);

  Tape t2;
  Var y = sum_all(t2, t2.leaf(Tensor::from({2}, {1, 2})));
  t2.backward(y);
  CHECK_THROWS_AS(t2.backward(y), TapeReused);
  CHECK_THROWS_AS(sum_all(t2, y), TapeReused);
}

TEST_CASE("non-finite forward value trips the detector") {
  Tape t;
  Var huge = t.leaf(Tensor::scalar(1e308));
  CHECK_THROWS_AS(scale(t, huge, 1e10), NonFiniteValue);
}

TEST_CASE("finite_diff_check on a quadratic") {
  auto f = [](Tape& t, const std::vector<Var>& p) { return sum_all(t, mul(t, p[0], p[0])); };
  std::vector<Tensor> params = {Tensor::from({1}, {3.0})};

  Tape t;
  Var x = t.leaf(params[0]);
  Var loss = f(t, {x});
  t.backward(loss);
  CHECK(t.grad(x).values[0] == doctest::Approx(6.0).epsilon(1e-14));

  FdReport rep = finite_diff_check(f, params);
  CHECK(rep.coords_checked == 1);
  CHECK(rep.max_rel_err <= 1e-7);
}

TEST_CASE("corrupted matmul gradient is detected") {
  Rng rng(9);
  std::vector<Tensor> params = {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& p) {
    return sum_all(t, matmul(t, p[0], p[1]));
  };
  debug::corrupt_matmul_backward = true;
  const double err = fd_on(f, params);
  debug::corrupt_matmul_backward = false;
  CHECK(err > 1e-2);
  CHECK(fd_on(f, params) <= kOpTol);
}

TEST_CASE("every differentiable op passes the gradient check") {
  Rng rng(100);

  SUBCASE("add / mul / scale / axpby / add_bias") {
    std::vector<Tensor> params = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
                                  random_tensor({1, 4}, rng)};
    auto f = [](Tape& t, const std::vector<Var>& p) {
      Var s = add(t, p[0], p[1]);
      s = mul(t, s, p[0]);
      s = scale(t, s, 1.7);
      s = axpby(t, 0.3, s, -1.2, p[1]);
      s = add_bias(t, s, p[2]);
      return weighted_sum(t, s);
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("add_constant / mul_constant") {
    Rng crng(11);
    Tensor c = random_tensor({2, 3}, crng);
    Tensor m = random_tensor({2, 3}, crng);
    std::vector<Tensor> params = {random_tensor({2, 3}, rng)};
    auto f = [&](Tape& t, const std::vector<Var>& p) {
      return weighted_sum(t, mul_constant(t, add_constant(t, p[0], c), m));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("embedding") {
    std::vector<Tensor> params = {random_tensor({6, 4}, rng)};
    std::vector<int> ids = {3, 0, 5, 3};  // repeated id exercises accumulation
    auto f = [&](Tape& t, const std::vector<Var>& p) {
      return weighted_sum(t, embedding(t, p[0], ids));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("layer_norm") {
    std::vector<Tensor> params = {random_tensor({4, 6}, rng), random_tensor({1, 6}, rng, 0.5, 1.5),
                                  random_tensor({1, 6}, rng)};
    auto f = [](Tape& t, const std::vector<Var>& p) {
      return weighted_sum(t, layer_norm(t, p[0], p[1], p[2]));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("gelu") {
    std::vector<Tensor> params = {random_tensor({3, 5}, rng, -2, 2)};
    auto f = [](Tape& t, const std::vector<Var>& p) { return weighted_sum(t, gelu(t, p[0])); };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("masked softmax") {
    std::vector<Tensor> params = {random_tensor({3, 4}, rng)};
    std::vector<uint8_t> keep = {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0};
    auto f = [&](Tape& t, const std::vector<Var>& p) {
      return weighted_sum(t, masked_softmax_rows(t, p[0], keep));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("cross entropy, both reductions") {
    std::vector<Tensor> params = {random_tensor({6, 7}, rng)};
    std::vector<int> gold = {1, 4, 0, 6, 2, 3};
    std::vector<uint8_t> include = {1, 1, 0, 1, 1, 1};  // one excluded row
    for (Reduction red : {Reduction::mean, Reduction::sum}) {
      auto f = [&, red](Tape& t, const std::vector<Var>& p) {
        return cross_entropy_rows(t, p[0], gold, include, red);
      };
      CHECK(fd_on(f, params) <= kOpTol);
    }
  }

  SUBCASE("slice and concat, rows and cols") {
    std::vector<Tensor> params = {random_tensor({4, 6}, rng), random_tensor({2, 6}, rng)};
    auto f = [](Tape& t, const std::vector<Var>& p) {
      Var top = slice_rows(t, p[0], 0, 2);
      Var stacked = concat_rows(t, {top, p[1], slice_rows(t, p[0], 2, 4)});
      Var left = slice_cols(t, stacked, 0, 2);
      Var right = slice_cols(t, stacked, 2, 6);
      return weighted_sum(t, concat_cols(t, {right, left}));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("rows_l2_normalize") {
    std::vector<Tensor> params = {random_tensor({4, 5}, rng, 0.2, 1.0)};
    auto f = [](Tape& t, const std::vector<Var>& p) {
      return weighted_sum(t, rows_l2_normalize(t, p[0]));
    };
    CHECK(fd_on(f, params) <= kOpTol);
  }

  SUBCASE("pooling") {
    std::vector<Tensor> params = {random_tensor({5, 4}, rng)};
    std::vector<uint8_t> include = {1, 0, 1, 1, 0};
    for (bool use_max : {true, false}) {
      auto f = [&, use_max](Tape& t, const std::vector<Var>& p) {
        Var pooled = use_max ? max_pool_rows(t, p[0], include) : mean_pool_rows(t, p[0], include);
        return weighted_sum(t, pooled);
      };
      CHECK(fd_on(f, params) <= kOpTol);
    }
  }

  SUBCASE("cosine_sim") {
    std::vector<Tensor> params = {random_tensor({4}, rng, 0.2, 1.0),
                                  random_tensor({4}, rng, -1.0, -0.2)};
    auto f = [](Tape& t, const std::vector<Var>& p) { return cosine_sim(t, p[0], p[1]); };
    CHECK(fd_on(f, params) <= kOpTol);
  }
}

TEST_CASE("finite_diff_check samples deterministically") {
  Rng rng(13);
  std::vector<Tensor> params = {random_tensor({8, 8}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& p) { return weighted_sum(t, gelu(t, p[0])); };
  FdReport a = finite_diff_check(f, params, 1e-5, 10, 99);
  FdReport b = finite_diff_check(f, params, 1e-5, 10, 99);
  CHECK(a.coords_checked == 10);
  CHECK(a.max_rel_err == b.max_rel_err);
  CHECK(a.worst_coord == b.worst_coord);
}
