#include "kernels_impl.hpp"

#include <cmath>

namespace fpr::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
              std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] += s;
    }
  }
}

void pairwise_distances(std::size_t rows, std::size_t n, std::size_t m,
                        const double* p, const double* q, double* out) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* pr = p + t * 2 * n;
    const double* qr = q + t * 2 * m;
    double* o = out + t * n * m;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double dx = pr[2 * i] - qr[2 * j];
        const double dy = pr[2 * i + 1] - qr[2 * j + 1];
        o[i * m + j] = std::sqrt(dx * dx + dy * dy);
      }
    }
  }
}

void exp(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::exp(x[i]);
    y[i] = v < 0x1p-1022 ? 0.0 : v;
  }
}

double max(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

}  // namespace fpr::kernels::scalar
