#pragma once
// Shared helpers for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace fpr::testing {

// Central finite-difference gradient of f at x.
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h = 1e-5) {
  std::vector<double> p(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = p[i];
    p[i] = xi + h;
    const double fp = f(p);
    p[i] = xi - h;
    const double fm = f(p);
    p[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double rel_error(std::span<const double> a, std::span<const double> b,
                        double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& e : v) e = u(rng);
  return v;
}

}  // namespace fpr::testing
