#include <cstdlib>
#include <stdexcept>
#include <string>

#include "flowify/kernels.hpp"

namespace flowify::kernels {
namespace {

constexpr KernelTable kScalar{Isa::scalar, &scalar::gemm, &scalar::dot, &scalar::axpy,
                              &scalar::mul,  &scalar::add,  &scalar::sum};

#if defined(FLOWIFY_HAVE_AVX2_TU)
constexpr KernelTable kAvx2{Isa::avx2, &avx2::gemm, &avx2::dot, &avx2::axpy,
                            &avx2::mul, &avx2::add,  &avx2::sum};
#endif

const KernelTable& select_at_startup() {
  if (const char* env = std::getenv("FLOWIFY_SIMD"); env && std::string(env) == "scalar") {
    return kScalar;
  }
#if defined(FLOWIFY_HAVE_AVX2_TU)
  if (isa_supported(Isa::avx2)) return kAvx2;
#endif
  return kScalar;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(FLOWIFY_HAVE_AVX2_TU)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported on this host: " +
                                std::string(isa_name(isa)));
  }
#if defined(FLOWIFY_HAVE_AVX2_TU)
  if (isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

const KernelTable& active() {
  static const KernelTable& chosen = select_at_startup();
  return chosen;
}

}  // namespace flowify::kernels
