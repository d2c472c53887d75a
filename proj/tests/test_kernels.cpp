#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "fpr/kernels/kernels.hpp"
#include "support.hpp"

using namespace fpr::kernels;
using fpr::testing::random_vector;

namespace {

bool have_simd() { return isa_available(Isa::Avx2); }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("scalar kernels compute reference values") {
  const Table& s = table(Isa::Scalar);
  const double a[] = {1, 2, 3};
  const double b[] = {4, 5, 6};
  CHECK(s.dot(a, b, 3) == 32.0);
  double y[] = {1, 1, 1};
  s.axpy(2.0, a, y, 3);
  CHECK(y[2] == 7.0);
  CHECK(s.max(b, 3) == 6.0);
  // [1 2; 3 4] * [1; 1]
  const double m[] = {1, 2, 3, 4};
  const double v[] = {1, 1};
  double c[2] = {};
  s.gemm_acc(false, false, 2, 1, 2, m, v, c);
  CHECK(c[0] == 3.0);
  CHECK(c[1] == 7.0);
  const double p[] = {0, 0};
  const double q[] = {3, 4};
  double d = 0;
  s.pairwise_distances(1, 1, 1, p, q, &d);
  CHECK(d == 5.0);
}

TEST_CASE("active kernel set is reported") {
  const Isa isa = active_isa();
  CHECK(isa_available(isa));
  CHECK(!isa_name(isa).empty());
}

TEST_CASE("SIMD kernels agree with the scalar reference") {
  if (!have_simd()) {
    MESSAGE("AVX2 kernels unavailable on this host; equivalence not exercised");
    return;
  }
  const Table& s = table(Isa::Scalar);
  const Table& v = table(Isa::Avx2);
  std::mt19937_64 rng(101);

  SUBCASE("dot and axpy over awkward lengths") {
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
      const auto a = random_vector(rng, n);
      const auto b = random_vector(rng, n);
      CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <=
            1e-13 * (1.0 + static_cast<double>(n)));
      auto y1 = random_vector(rng, n);
      auto y2 = y1;
      s.axpy(0.37, a.data(), y1.data(), n);
      v.axpy(0.37, a.data(), y2.data(), n);
      CHECK(max_abs_diff(y1, y2) < 1e-15);
    }
  }

  SUBCASE("gemm in every transpose combination") {
    for (std::size_t m : {1u, 3u, 8u}) {
      for (std::size_t n : {1u, 5u, 9u}) {
        for (std::size_t k : {1u, 4u, 7u}) {
          const auto a = random_vector(rng, m * k);
          const auto b = random_vector(rng, k * n);
          for (int ta = 0; ta < 2; ++ta) {
            for (int tb = 0; tb < 2; ++tb) {
              auto c1 = random_vector(rng, m * n);
              auto c2 = c1;
              s.gemm_acc(ta, tb, m, n, k, a.data(), b.data(), c1.data());
              v.gemm_acc(ta, tb, m, n, k, a.data(), b.data(), c2.data());
              CHECK(max_abs_diff(c1, c2) < 1e-13);
            }
          }
        }
      }
    }
  }

  SUBCASE("pairwise distances") {
    for (std::size_t rows : {1u, 4u, 17u}) {
      for (std::size_t n : {1u, 2u, 6u}) {
        for (std::size_t m : {1u, 3u, 10u}) {
          const auto p = random_vector(rng, rows * 2 * n);
          const auto q = random_vector(rng, rows * 2 * m);
          std::vector<double> o1(rows * n * m), o2(rows * n * m);
          s.pairwise_distances(rows, n, m, p.data(), q.data(), o1.data());
          v.pairwise_distances(rows, n, m, p.data(), q.data(), o2.data());
          CHECK(max_abs_diff(o1, o2) < 1e-15);
        }
      }
    }
  }

  SUBCASE("exp across the representable range") {
    auto x = random_vector(rng, 997, -745.0, 709.0);
    for (double e : {0.0, -0.0, 1.0, -1.0, 709.7, -708.0, -744.0, -800.0, 1e-300, -1e-300}) {
      x.push_back(e);
    }
    std::vector<double> y1(x.size()), y2(x.size());
    s.exp(x.data(), y1.data(), x.size());
    v.exp(x.data(), y2.data(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CAPTURE(x[i]);
      if (y1[i] < std::numeric_limits<double>::min()) {
        CHECK(y2[i] < 1e-300);
      } else {
        CHECK(std::abs(y1[i] - y2[i]) <= 4e-16 * y1[i]);
      }
    }
  }

  SUBCASE("max") {
    for (std::size_t n : {1u, 2u, 5u, 8u, 13u, 100u}) {
      const auto a = random_vector(rng, n, -5.0, 5.0);
      CHECK(s.max(a.data(), n) == v.max(a.data(), n));
    }
  }
}

TEST_CASE("batched tanh matches std::tanh") {
  std::mt19937_64 rng(21);
  auto x = random_vector(rng, 1001, -30.0, 30.0);
  for (double s : {0.0, -0.0, 1e-12, -1e-9, 0.124, 0.126, -0.2, 400.0, -800.0}) x.push_back(s);
  std::vector<double> y(x.size());
  fpr::kernels::tanh(x.data(), y.data(), x.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ref = std::tanh(x[i]);
    worst = std::max(worst, std::abs(y[i] - ref) / std::max(std::abs(ref), 1e-300));
    CHECK(std::signbit(y[i]) == std::signbit(ref));
  }
  CHECK(worst < 1e-14);
  // In place.
  std::vector<double> z = x;
  fpr::kernels::tanh(z.data(), z.data(), z.size());
  CHECK(z == y);
}
