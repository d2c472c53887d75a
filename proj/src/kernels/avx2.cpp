// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher has confirmed CPU support.
#include "kernels_impl.hpp"

#include <immintrin.h>

#include <cmath>
#include <cstdint>

namespace fpr::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(s, _mm_unpackhi_pd(s, s)));
}

// 2^e for integral e in [-1022, 1023].
inline __m256d pow2(__m256d e) {
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52
  const __m256i bits = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(e, magic)),
                                        _mm256_castpd_si256(magic));
  return _mm256_castsi256_pd(
      _mm256_slli_epi64(_mm256_add_epi64(bits, _mm256_set1_epi64x(1023)), 52));
}

// exp on four lanes: Cody-Waite reduction x = n ln2 + r, |r| <= ln2/2, then a
// degree-13 Taylor polynomial in r (truncation < 1e-17 relative).
inline __m256d exp4(__m256d x) {
  const __m256d hi_clip = _mm256_set1_pd(709.782712893384);
  const __m256d lo_clip = _mm256_set1_pd(-708.3964185322641);
  const __m256d overflow = _mm256_cmp_pd(x, hi_clip, _CMP_GT_OQ);
  const __m256d underflow = _mm256_cmp_pd(x, lo_clip, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lo_clip), hi_clip);

  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  static constexpr double kInvFact[] = {
      1.0,
      1.0,
      1.0 / 2.0,
      1.0 / 6.0,
      1.0 / 24.0,
      1.0 / 120.0,
      1.0 / 720.0,
      1.0 / 5040.0,
      1.0 / 40320.0,
      1.0 / 362880.0,
      1.0 / 3628800.0,
      1.0 / 39916800.0,
      1.0 / 479001600.0,
      1.0 / 6227020800.0,
  };
  __m256d p = _mm256_set1_pd(kInvFact[13]);
  for (int i = 12; i >= 0; --i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));

  // 2^n split in two factors so that n = 1024 stays representable.
  const __m256d n_half = _mm256_floor_pd(_mm256_mul_pd(n, _mm256_set1_pd(0.5)));
  const __m256d n_rest = _mm256_sub_pd(n, n_half);
  const __m256d y = _mm256_mul_pd(_mm256_mul_pd(p, pow2(n_half)), pow2(n_rest));

  __m256d out = y;
  out = _mm256_blendv_pd(out, _mm256_set1_pd(INFINITY), overflow);
  out = _mm256_blendv_pd(out, _mm256_setzero_pd(), underflow);
  return out;
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
              std::size_t k, const double* a, const double* b, double* c) {
  if (trans_b && trans_a) {
    scalar::gemm_acc(trans_a, trans_b, m, n, k, a, b, c);
    return;
  }
  if (trans_b) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
    return;
  }
  // Row of C accumulates broadcast(A[i,p]) * row p of B.
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      axpy(av, b + p * n, crow, n);
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
      const __m256d px = _mm256_set1_pd(pr[2 * i]);
      const __m256d py = _mm256_set1_pd(pr[2 * i + 1]);
      std::size_t j = 0;
      for (; j + 4 <= m; j += 4) {
        const __m256d q01 = _mm256_loadu_pd(qr + 2 * j);
        const __m256d q23 = _mm256_loadu_pd(qr + 2 * j + 4);
        const __m256d xs = _mm256_permute4x64_pd(_mm256_unpacklo_pd(q01, q23), 0xD8);
        const __m256d ys = _mm256_permute4x64_pd(_mm256_unpackhi_pd(q01, q23), 0xD8);
        const __m256d dx = _mm256_sub_pd(px, xs);
        const __m256d dy = _mm256_sub_pd(py, ys);
        const __m256d d2 = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
        _mm256_storeu_pd(o + i * m + j, _mm256_sqrt_pd(d2));
      }
      for (; j < m; ++j) {
        const double dx = pr[2 * i] - qr[2 * j];
        const double dy = pr[2 * i + 1] - qr[2 * j + 1];
        o[i * m + j] = std::sqrt(dx * dx + dy * dy);
      }
    }
  }
}

void exp(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp4(_mm256_loadu_pd(x + i)));
  if (i < n) {
    double in[4] = {0.0, 0.0, 0.0, 0.0};
    double res[4];
    for (std::size_t j = i; j < n; ++j) in[j - i] = x[j];
    _mm256_storeu_pd(res, exp4(_mm256_loadu_pd(in)));
    for (std::size_t j = i; j < n; ++j) y[j] = res[j - i];
  }
}

double max(const double* x, std::size_t n) {
  std::size_t i = 0;
  double m = x[0];
  if (n >= 4) {
    __m256d v = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) v = _mm256_max_pd(v, _mm256_loadu_pd(x + i));
    m = hmax(v);
  }
  for (; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

}  // namespace fpr::kernels::avx2
