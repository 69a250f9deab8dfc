#pragma once
// 1-D multi-channel convolution diagonalized by the DFT. Experimental: used by
// the verification suites, not by the default layer set.

#include <complex>
#include <vector>

#include "flowify/flow_layer.hpp"

namespace flowify {

using Complex = std::complex<double>;

/// In-place unnormalized DFT (sign -1) or inverse DFT (sign +1, no 1/L).
/// Radix-2 for powers of two, Bluestein otherwise.
void fft_inplace(std::vector<Complex>& a, bool inverse);
/// Orthonormal transform (1/sqrt(L) both ways).
std::vector<Complex> fft_ortho(std::vector<Complex> a, bool inverse);

class SpectralConv {
 public:
  /// Zero spectral weights.
  SpectralConv(std::size_t in_channels, std::size_t out_channels, std::size_t length,
               std::size_t kernel_size);

  /// Weights whose circular kernel is the zero-padded, flipped k-tap filter
  /// K[out][in][k]; forward() then equals a valid cross-correlation.
  static SpectralConv from_kernel(const std::vector<double>& kernel, std::size_t in_channels,
                                  std::size_t out_channels, std::size_t kernel_size,
                                  std::size_t length);
  /// Per-frequency W_f = V_f diag(sigma_f) U_f with unitary factors (real
  /// rotations at the self-conjugate frequencies), square and nonsingular.
  static SpectralConv random_svd(std::size_t channels, std::size_t length, std::size_t kernel_size,
                                 Rng& rng, double log_sigma_std = 0.3);
  /// W_f = I for every frequency.
  static SpectralConv identity(std::size_t channels, std::size_t length, std::size_t kernel_size);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t length() const { return length_; }
  std::size_t kernel_size() const { return k_; }
  /// Stored frequencies 0..L/2.
  std::size_t frequencies() const { return length_ / 2 + 1; }
  /// True for f = 0 and (even L) f = L/2, whose weights must be real.
  bool self_conjugate(std::size_t f) const;

  /// Real and imaginary parts, [F, out, in]. Imaginary parts at self-conjugate
  /// frequencies are ignored.
  Parameter& real_part() { return re_; }
  Parameter& imag_part() { return im_; }
  const Parameter& real_part() const { return re_; }
  const Parameter& imag_part() const { return im_; }

  /// W_f[o][i] for any f in 0..L-1, extended by conjugate symmetry.
  Complex weight(std::size_t f, std::size_t o, std::size_t i) const;

  /// x: [B, in, L]. FFT -> per-frequency mixing -> inverse FFT, then drops the
  /// first k - 1 samples unless keep_all. Result [B, out, L - k + 1] (or L).
  DiffArray forward(const DiffArray& x, bool keep_all = false) const;
  /// Exact inverse of forward(x, keep_all = true); needs in == out.
  /// Throws ConditioningError for a singular frequency matrix.
  DiffArray inverse(const DiffArray& z) const;
  /// sum_f log|det W_f| over all L frequencies (the log-determinant of the
  /// circular map on real signals).
  double log_abs_det() const;

  /// Circular time-domain kernel h[o][i][tau] via the inverse FFT of the full
  /// symmetric spectrum. Also returns max |imag| through `max_imag`.
  std::vector<double> time_kernel(double* max_imag = nullptr) const;
  /// sum over tau >= k of h[o][i][tau]^2, differentiable in the spectral weights.
  DiffArray support_penalty(Context& ctx) const;

 private:
  std::size_t in_, out_, length_, k_;
  Parameter re_;
  Parameter im_;
};

/// Valid 1-D cross-correlation (what conv1d computes). x: [B, in, L], K: [out, in, k].
std::vector<double> direct_conv1d(const std::vector<double>& x, std::size_t batch,
                                  std::size_t in_channels, std::size_t length,
                                  const std::vector<double>& kernel, std::size_t out_channels,
                                  std::size_t kernel_size);

}  // namespace flowify
