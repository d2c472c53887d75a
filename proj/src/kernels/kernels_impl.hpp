#pragma once

#include <cstddef>

namespace fpr::kernels {

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
              std::size_t k, const double* a, const double* b, double* c);
void pairwise_distances(std::size_t rows, std::size_t n, std::size_t m,
                        const double* p, const double* q, double* out);
void exp(const double* x, double* y, std::size_t n);
double max(const double* x, std::size_t n);
}  // namespace scalar

#if defined(FPR_HAVE_AVX2_KERNELS)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
              std::size_t k, const double* a, const double* b, double* c);
void pairwise_distances(std::size_t rows, std::size_t n, std::size_t m,
                        const double* p, const double* q, double* out);
void exp(const double* x, double* y, std::size_t n);
double max(const double* x, std::size_t n);
}  // namespace avx2
#endif

}  // namespace fpr::kernels
