#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "doctest.h"
#include "fpr/ad/gradient.hpp"
#include "support.hpp"

using namespace fpr;
using namespace fpr::ad;
using fpr::testing::fd_gradient;
using fpr::testing::random_vector;
using fpr::testing::rel_error;

namespace {

// Value and reverse-mode gradient vs central differences for f.
double check_fd(const ScalarFunction& f, const std::vector<double>& x, double h = 1e-6) {
  const GradientResult r = value_and_grad(f, x);
  const auto fd = fd_gradient([&](std::span<const double> p) { return value_only(f, p); }, x, h);
  return rel_error(r.gradient, fd);
}

}  // namespace

TEST_CASE("square of a scalar") {
  const double x[] = {3.0};
  const auto r = value_and_grad([](Tape&, Var v) { return square(v); }, x);
  CHECK(r.value == 9.0);
  REQUIRE(r.gradient.size() == 1);
  CHECK(r.gradient[0] == 6.0);
}

TEST_CASE("logsumexp of two zeros") {
  const double x[] = {0.0, 0.0};
  const auto r = value_and_grad([](Tape&, Var v) { return logsumexp(v); }, x);
  CHECK(r.value == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(r.gradient[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.gradient[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("second Laplacian eigenvalue of a 2-node graph") {
  // L(a) = [[a, -a], [-a, a]] has eigenvalues 0 and 2a.
  const double x[] = {0.7};
  const auto r = value_and_grad(
      [](Tape& t, Var a) {
        const double pattern[] = {1.0, -1.0, -1.0, 1.0};
        Var L = mul(t.constant(pattern, 2, 2), a);
        return element(sym_eigvals(L), 1);
      },
      x);
  CHECK(r.value == doctest::Approx(1.4).epsilon(1e-14));
  CHECK(r.gradient[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("sigmoid and hinge at reference points") {
  const double zero[] = {0.0};
  const auto s = value_and_grad([](Tape&, Var v) { return sigmoid(v); }, zero);
  CHECK(s.value == 0.5);
  CHECK(s.gradient[0] == 0.25);

  const double minus_one[] = {-1.0};
  const auto h = value_and_grad([](Tape&, Var v) { return relu(v); }, minus_one);
  CHECK(h.value == 0.0);
  CHECK(h.gradient[0] == 0.0);
}

TEST_CASE("diagonal linear solve") {
  const double b[] = {2.0, 4.0};
  Tape t;
  const double a[] = {2.0, 0.0, 0.0, 4.0};
  Var A = t.constant(a, 2, 2);
  Var bv = t.variable(b);
  Var z = solve(A, bv);
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(1.0).epsilon(1e-15));
  t.backward(element(z, 0));
  CHECK(t.grad(bv)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(t.grad(bv)[1] == 0.0);
}

TEST_CASE("solve adjoint matches finite differences for A and b") {
  std::mt19937_64 rng(11);
  auto x = random_vector(rng, 12);
  // A = 3I + perturbation keeps the system well conditioned.
  auto f = [](Tape& t, Var v) {
    Var A = add(reshape(slice(v, 0, 9), 3, 3), t.constant(std::vector<double>{3, 0, 0, 0, 3, 0, 0, 0, 3}, 3, 3));
    Var b = slice(v, 9, 3);
    Var z = solve(A, b);
    const double w[] = {1.0, -2.0, 0.5};
    return dot(z, t.constant(w));
  };
  CHECK(check_fd(f, x) < 1e-8);
}

TEST_CASE("singular solve is reported") {
  Tape t;
  const double a[] = {1.0, 2.0, 2.0, 4.0};
  const double b[] = {1.0, 1.0};
  CHECK_THROWS_AS(solve(t.constant(a, 2, 2), t.constant(b)), SingularMatrixError);
}

TEST_CASE("elementary operation set is reachable by name") {
  const auto& names = elementary_op_set();
  for (const char* needed : {"add", "sub", "mul", "div", "pow", "exp", "log", "tanh", "sigmoid",
                             "sqrt", "hinge", "min", "max", "minimum", "maximum", "logsumexp",
                             "dot", "norm", "matmul", "sym_eigvals", "solve"}) {
    CHECK_MESSAGE(std::find(names.begin(), names.end(), needed) != names.end(), needed);
  }
  Tape t;
  const double v[] = {1.0, 2.0};
  Var a = t.variable(v);
  const std::size_t before = t.node_count();
  CHECK_THROWS_AS(apply("erf", a), UnsupportedOperationError);
  CHECK_THROWS_AS(apply("cross", a, a), UnsupportedOperationError);
  CHECK(t.node_count() == before);
  CHECK(apply("exp", a)[1] == doctest::Approx(std::exp(2.0)));
}

TEST_CASE("non-finite intermediates name the operation") {
  Tape t;
  const double neg[] = {-1.0};
  try {
    (void)log(t.variable(neg));
    FAIL("log of a negative number did not throw");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "log");
  }
  const double big[] = {1000.0};
  try {
    (void)exp(t.variable(big));
    FAIL("exp overflow did not throw");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "exp");
  }
  const double zero[] = {0.0};
  try {
    (void)div(t.constant(1.0), t.variable(zero));
    FAIL("division by zero did not throw");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "div");
  }
  const double nan[] = {std::nan("")};
  CHECK_THROWS_AS(t.variable(nan), NonFiniteError);
}

TEST_CASE("ties send the derivative to the first argument") {
  Tape t;
  const double a[] = {2.0, 2.0, 1.0};
  Var v = t.variable(a);
  t.backward(max(v));
  CHECK(t.grad(v)[0] == 1.0);
  CHECK(t.grad(v)[1] == 0.0);

  const double x[] = {1.0};
  Var p = t.variable(x);
  Var q = t.variable(x);
  t.backward(minimum(p, q));
  CHECK(t.grad(p)[0] == 1.0);
  CHECK(t.grad(q)[0] == 0.0);
  t.backward(maximum(p, q));
  CHECK(t.grad(p)[0] == 1.0);
  CHECK(t.grad(q)[0] == 0.0);
}

TEST_CASE("elementwise operations match finite differences") {
  std::mt19937_64 rng(3);
  const auto x = random_vector(rng, 6, 0.2, 1.5);
  const std::vector<ScalarFunction> fs = {
      [](Tape&, Var v) { return sum(exp(v) * tanh(v)); },
      [](Tape&, Var v) { return sum(log(v) / sqrt(v)); },
      [](Tape&, Var v) { return sum(sigmoid(v) - square(v)); },
      [](Tape&, Var v) { return sum(pow(v, 2.5) + sin(v) * cos(v)); },
      [](Tape&, Var v) { return sum(pow(v, reshape(v, 1, 6) * 0.5)); },
      [](Tape&, Var v) { return sum(relu(v - 0.7)); },
      [](Tape&, Var v) { return norm(v) + dot(v, v); },
      [](Tape&, Var v) { return logsumexp(v * 3.0) + 2.0 / sum(v); },
      [](Tape&, Var v) { return min(v) + max(v); },
      [](Tape&, Var v) { return sum(minimum(v, slice(v, 0, 1)) + maximum(v, 0.5 - v)); },
      [](Tape&, Var v) { return smooth_min(v, 10.0) + smooth_max(v, 10.0); },
  };
  for (std::size_t i = 0; i < fs.size(); ++i) {
    CAPTURE(i);
    CHECK(check_fd(fs[i], x) < 1e-7);
  }
}

TEST_CASE("broadcasting and row reductions match finite differences") {
  std::mt19937_64 rng(5);
  const auto x = random_vector(rng, 12);
  auto f = [](Tape&, Var v) {
    Var m = reshape(slice(v, 0, 8), 2, 4);
    Var col = slice(v, 8, 2, 1);
    Var rowv = slice(v, 8, 1, 4);
    Var a = m * col + rowv;
    Var b = m - slice(v, 11, 1, 1);
    return sum(logsumexp_rows(a)) + sum(square(sum_cols(b))) + sum(row_norms(a)) +
           sum(sum_rows(b * b));
  };
  CHECK(check_fd(f, x) < 1e-7);

  Tape t;
  const double a[6] = {};
  const double b[4] = {};
  CHECK_THROWS_AS(add(t.constant(a, 2, 3), t.constant(b, 2, 2)), ShapeError);
}

TEST_CASE("matrix products in every transpose combination") {
  std::mt19937_64 rng(7);
  const auto x = random_vector(rng, 6 + 12);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      auto f = [=](Tape&, Var v) {
        Var A = ta ? reshape(slice(v, 0, 6), 3, 2) : reshape(slice(v, 0, 6), 2, 3);
        Var B = tb ? reshape(slice(v, 6, 12), 4, 3) : reshape(slice(v, 6, 12), 3, 4);
        Var C = matmul(A, B, ta != 0, tb != 0);
        return sum(square(C)) + sum(transpose(C) * 0.3);
      };
      CAPTURE(ta);
      CAPTURE(tb);
      CHECK(check_fd(f, x) < 1e-8);
    }
  }
  Tape t;
  const double a[6] = {};
  CHECK_THROWS_AS(matmul(t.constant(a, 2, 3), t.constant(a, 2, 3)), ShapeError);
}

TEST_CASE("matrix-vector product value") {
  Tape t;
  const double a[] = {1, 2, 3, 4};
  const double v[] = {1, -1};
  Var y = matmul(t.constant(a, 2, 2), t.variable(v));
  CHECK(y[0] == -1.0);
  CHECK(y[1] == -1.0);
}

TEST_CASE("structural operations route gradients") {
  std::mt19937_64 rng(9);
  const auto x = random_vector(rng, 8);
  auto f = [](Tape&, Var v) {
    const std::uint32_t idx[] = {0, 3, 3, 7};
    Var g = gather(v, idx);
    const std::uint32_t to[] = {1, 0, 1, 2};
    Var s = scatter_add(g * g, to, 3);
    Var parts[] = {s, slice(v, 2, 3)};
    Var c = concat(parts);
    Var rows[] = {slice(v, 0, 4), slice(v, 4, 4)};
    Var st = stack_rows(rows);
    return dot(c, c) + sum(square(row(st, 1))) + sum(exp(transpose(st)) * 0.1);
  };
  CHECK(check_fd(f, x) < 1e-7);
}

TEST_CASE("pairwise distances") {
  Tape t;
  const double p[] = {0, 0, 1, 1};
  const double q[] = {3, 4};
  Var d = pairwise_distances(t.variable(p, 1, 4), t.variable(q, 1, 2));
  CHECK(d.rows() == 1);
  CHECK(d.cols() == 2);
  CHECK(d[0] == doctest::Approx(5.0));
  CHECK(d[1] == doctest::Approx(std::sqrt(4.0 + 9.0)));

  std::mt19937_64 rng(13);
  const auto x = random_vector(rng, 3 * 4 + 3 * 6);
  auto f = [](Tape&, Var v) {
    Var a = reshape(slice(v, 0, 12), 3, 4);
    Var b = reshape(slice(v, 12, 18), 3, 6);
    return sum(smooth_min_rows(pairwise_distances(a, b), 5.0));
  };
  CHECK(check_fd(f, x) < 1e-7);
}

TEST_CASE("eigenvalue derivative on random symmetric 4x4 matrices") {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vector(rng, 16);
    // Separate the spectrum by adding a spread diagonal.
    for (int i = 0; i < 4; ++i) x[i * 5] += 2.0 * i;
    for (std::size_t k = 0; k < 4; ++k) {
      auto f = [k](Tape&, Var v) { return element(sym_eigvals(reshape(v, 4, 4)), k); };
      const auto r = value_and_grad(f, x);
      const auto fd = fd_gradient([&](std::span<const double> p) { return value_only(f, p); }, x,
                                  1e-6);
      CHECK(rel_error(r.gradient, fd) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked == 200);
}

TEST_CASE("repeated eigenvalues raise a diagnostic only when differentiated") {
  Tape t;
  const double eye[] = {1, 0, 0, 0, 1, 0, 0, 0, 3};
  Var A = t.variable(eye, 3, 3);
  Var ev = sym_eigvals(A);
  CHECK(ev[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(t.backward(element(ev, 1)), RepeatedEigenvalueError);
  t.backward(element(ev, 2));
  CHECK(t.grad(A)[8] == doctest::Approx(1.0));
}

TEST_CASE("linearity of the gradient") {
  std::mt19937_64 rng(19);
  auto f = [](Tape&, Var v) { return sum(exp(v) * v); };
  auto g = [](Tape&, Var v) { return norm(v) + logsumexp(v); };
  const double alpha = 1.7;
  const double beta = -0.4;
  auto h = [&](Tape& t, Var v) { return f(t, v) * alpha + g(t, v) * beta; };
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vector(rng, 5);
    const auto rf = value_and_grad(f, x);
    const auto rg = value_and_grad(g, x);
    const auto rh = value_and_grad(h, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(rh.gradient[i] - (alpha * rf.gradient[i] + beta * rg.gradient[i])) < 1e-12);
    }
  }
}

TEST_CASE("custom operations receive the output cotangent") {
  Tape t;
  const double x[] = {2.0, 3.0};
  Var v = t.variable(x);
  Var in[] = {v};
  Var c = t.custom("prod", in, {6.0}, 1, 1, [&](CustomGradients& g) {
    g.input_grads[0][0] += g.output_grad[0] * 3.0;
    g.input_grads[0][1] += g.output_grad[0] * 2.0;
  });
  t.backward(c * 2.0);
  CHECK(t.grad(v)[0] == 6.0);
  CHECK(t.grad(v)[1] == 4.0);
}

TEST_CASE("independent tapes on concurrent threads") {
  auto f = [](Tape&, Var v) { return sum(exp(v) * sin(v)) + norm(v); };
  std::mt19937_64 rng(23);
  const auto x = random_vector(rng, 50);
  const auto expected = value_and_grad(f, x);
  std::vector<std::thread> threads;
  std::vector<int> ok(4, 0);
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      bool same = true;
      for (int rep = 0; rep < 200; ++rep) {
        const auto r = value_and_grad(f, x);
        same = same && r.value == expected.value && r.gradient == expected.gradient;
      }
      ok[i] = same ? 1 : 0;
    });
  }
  for (auto& th : threads) th.join();
  for (int v : ok) CHECK(v == 1);
}

TEST_CASE("smooth minimum bounds") {
  Tape t;
  const double one[] = {4.2};
  CHECK(smooth_min(t.constant(one), 100.0).scalar() == doctest::Approx(4.2).epsilon(1e-15));
  const double zeros[] = {0.0, 0.0};
  CHECK(smooth_min(t.constant(zeros), 100.0).scalar() ==
        doctest::Approx(-std::log(2.0) / 100.0).epsilon(1e-12));
  const double far[] = {1.0, 100.0};
  CHECK(std::abs(smooth_min(t.constant(far), 100.0).scalar() - 1.0) < 1e-12);
}
