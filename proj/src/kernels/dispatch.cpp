#include "fpr/kernels/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "kernels_impl.hpp"

namespace fpr::kernels {

namespace {

constexpr Table kScalar{&scalar::dot, &scalar::axpy, &scalar::gemm_acc,
                        &scalar::pairwise_distances, &scalar::exp, &scalar::max};

#if defined(FPR_HAVE_AVX2_KERNELS)
constexpr Table kAvx2{&avx2::dot, &avx2::axpy, &avx2::gemm_acc,
                      &avx2::pairwise_distances, &avx2::exp, &avx2::max};
#endif

Isa select() {
  if (const char* forced = std::getenv("FPR_KERNELS")) {
    if (std::string(forced) == "scalar") return Isa::Scalar;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(FPR_HAVE_AVX2_KERNELS)
  static const bool has_avx2 = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return has_avx2;
#else
  return false;
#endif
}

const Table& table(Isa isa) {
#if defined(FPR_HAVE_AVX2_KERNELS)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return kAvx2;
#endif
  (void)isa;
  return kScalar;
}

Isa active_isa() {
  static const Isa isa = select();
  return isa;
}

const Table& active() {
  static const Table& t = table(active_isa());
  return t;
}

void tanh(const double* x, double* y, std::size_t n) {
  // tanh|x| = (1 - e) / (1 + e), e = exp(-2|x|). Small |x| would cancel in
  // 1 - e and go through std::tanh instead.
  thread_local std::vector<double> e;
  e.resize(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = -2.0 * std::abs(x[i]);
  active().exp(e.data(), e.data(), n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ax = std::abs(x[i]);
    const double th = ax < 0.125 ? std::tanh(ax) : (1.0 - e[i]) / (1.0 + e[i]);
    y[i] = std::copysign(th, x[i]);
  }
}

}  // namespace fpr::kernels
