#pragma once
// Dense numeric kernels used by the differentiation engine and the
// simulators. Every kernel has a portable scalar reference version and, on
// x86-64, an AVX2/FMA variant. The variant is chosen once at startup from
// CPUID; FPR_KERNELS=scalar in the environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace fpr::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct Table {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // Row-major C (m x n) += op(A) * op(B), where op(A) is m x k and op(B) is
  // k x n. trans_a / trans_b select the transposed storage of A (k x m) and
  // B (n x k).
  void (*gemm_acc)(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                   std::size_t k, const double* a, const double* b, double* c);

  // out[t, i*m + j] = || p[t, 2i:2i+2] - q[t, 2j:2j+2] ||_2 for every row t.
  // p is rows x 2n, q is rows x 2m, out is rows x (n*m).
  void (*pairwise_distances)(std::size_t rows, std::size_t n, std::size_t m,
                             const double* p, const double* q, double* out);

  // y[i] = exp(x[i]); results below ~1e-308 flush to zero.
  void (*exp)(const double* x, double* y, std::size_t n);

  // max_i x[i]; n must be >= 1.
  double (*max)(const double* x, std::size_t n);
};

const Table& table(Isa isa);
bool isa_available(Isa isa);

// Kernel set selected for this process.
Isa active_isa();
const Table& active();

// y[i] = tanh(x[i]) through the active exp kernel; x and y may alias.
void tanh(const double* x, double* y, std::size_t n);

}  // namespace fpr::kernels
