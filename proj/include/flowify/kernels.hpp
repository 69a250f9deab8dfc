#pragma once
// Dense double-precision inner loops used by DiffArray.
//
// Every kernel exists as a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The variant is picked once at startup from CPUID; setting the
// environment variable FLOWIFY_SIMD=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace flowify::kernels {

enum class Isa { scalar, avx2 };

/// Row-major matrix operand. When `transposed` is set the logical matrix is
/// the transpose of the stored one, i.e. element (i, j) lives at data[j * ld + i].
struct MatRef {
  const double* data;
  std::size_t ld;
  bool transposed = false;

  double at(std::size_t i, std::size_t j) const {
    return transposed ? data[j * ld + i] : data[i * ld + j];
  }
};

// C[m x n] = (accumulate ? C : 0) + op(A)[m x k] * op(B)[k x n]; C has leading dim ldc.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b,
                        double* c, std::size_t ldc, bool accumulate);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
// y += alpha * x
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
// out = x * y elementwise
using MulFn = void (*)(const double* x, const double* y, double* out, std::size_t n);
// out = x + y elementwise
using AddFn = void (*)(const double* x, const double* y, double* out, std::size_t n);
using SumFn = double (*)(const double* x, std::size_t n);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
  MulFn mul;
  AddFn add;
  SumFn sum;
};

bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);

/// Table for a specific ISA; throws std::invalid_argument if unsupported on this host.
const KernelTable& table(Isa isa);

/// Table selected at startup.
const KernelTable& active();

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c,
          std::size_t ldc, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void mul(const double* x, const double* y, double* out, std::size_t n);
void add(const double* x, const double* y, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c,
          std::size_t ldc, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void mul(const double* x, const double* y, double* out, std::size_t n);
void add(const double* x, const double* y, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2

inline void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c,
                 std::size_t ldc, bool accumulate) {
  active().gemm(m, n, k, a, b, c, ldc, accumulate);
}
inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

}  // namespace flowify::kernels
