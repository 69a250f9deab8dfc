#pragma once
// Reference math used by the tests. Nothing here calls into the library's
// numerical kernels, so it can serve as an independent check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace support {

using Matrix = std::vector<double>;  // row-major, square unless noted

inline Matrix identity(std::size_t d) {
  Matrix m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b, std::size_t n, std::size_t k, std::size_t m) {
  Matrix c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

/// Skew matrix from the strict upper triangle in row-major order.
inline Matrix skew_from_upper(const std::vector<double>& g, std::size_t d) {
  Matrix s(d * d, 0.0);
  std::size_t t = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      s[i * d + j] = g[t];
      s[j * d + i] = -g[t];
      ++t;
    }
  return s;
}

/// exp(A) by halving until the norm is small, a 30-term Taylor series, then squaring.
inline Matrix expm(Matrix a, std::size_t d) {
  double norm = 0.0;
  for (double v : a) norm = std::max(norm, std::abs(v));
  int squarings = 0;
  while (norm * static_cast<double>(d) > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const double s = std::ldexp(1.0, -squarings);
  for (double& v : a) v *= s;
  Matrix result = identity(d), term = identity(d);
  for (int k = 1; k <= 30; ++k) {
    term = matmul(term, a, d, d, d);
    for (double& v : term) v /= k;
    for (std::size_t i = 0; i < result.size(); ++i) result[i] += term[i];
  }
  for (int i = 0; i < squarings; ++i) result = matmul(result, result, d, d, d);
  return result;
}

/// log|det A| by Gaussian elimination with partial pivoting; `sign` receives the sign.
inline double log_abs_det(Matrix a, std::size_t d, double* sign = nullptr) {
  double ld = 0.0, sg = 1.0;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(a[r * d + c]) > std::abs(a[p * d + c])) p = r;
    if (p != c) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[c * d + j], a[p * d + j]);
      sg = -sg;
    }
    const double piv = a[c * d + c];
    if (piv == 0.0) {
      if (sign) *sign = 0.0;
      return -INFINITY;
    }
    if (piv < 0) sg = -sg;
    ld += std::log(std::abs(piv));
    for (std::size_t r = c + 1; r < d; ++r) {
      const double f = a[r * d + c] / piv;
      for (std::size_t j = c; j < d; ++j) a[r * d + j] -= f * a[c * d + j];
    }
  }
  if (sign) *sign = sg;
  return ld;
}

/// Central-difference Jacobian of f: R^n -> R^m, returned as [m, n].
inline Matrix jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                       const std::vector<double>& x, std::size_t m, double h = 1e-5) {
  const std::size_t n = x.size();
  Matrix j(m * n);
  for (std::size_t c = 0; c < n; ++c) {
    auto xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    const auto fp = f(xp), fm = f(xm);
    for (std::size_t r = 0; r < m; ++r) j[r * n + c] = (fp[r] - fm[r]) / (2.0 * h);
  }
  return j;
}

inline double std_normal_logpdf(const std::vector<double>& z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return -0.5 * s - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

inline double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Volume of the unit ball in R^k.
inline double unit_ball_volume(std::size_t k) {
  const double kk = static_cast<double>(k);
  return std::pow(std::numbers::pi, kk / 2.0) / std::tgamma(kk / 2.0 + 1.0);
}

/// Mean and standard error of a sample.
struct MeanSe {
  double mean = 0.0, se = 0.0;
};
inline MeanSe mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace support
