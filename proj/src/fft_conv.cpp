#include "flowify/fft_conv.hpp"

#include <cmath>
#include <numbers>

#include "flowify/errors.hpp"

namespace flowify {
namespace {

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

void radix2(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const Complex wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const Complex u = a[i + j];
        const Complex v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

void bluestein(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = Complex(std::cos(ang), std::sin(ang));
  }
  std::vector<Complex> fa(m), fb(m);
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
  radix2(fa, false);
  radix2(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  radix2(fa, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

/// LU with partial pivoting on an n x n complex matrix (row-major, in place).
/// Returns log|det|; throws if a pivot vanishes relative to the matrix scale.
double complex_lu(std::vector<Complex>& a, std::vector<std::size_t>& perm, std::size_t n) {
  double scale = 0.0;
  for (const auto& v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) throw ConditioningError("frequency matrix is zero");
  perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  double logdet = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    }
    if (std::abs(a[piv * n + c]) <= 1e-13 * scale) {
      throw ConditioningError("frequency matrix is singular to working precision");
    }
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[c * n + j], a[piv * n + j]);
      std::swap(perm[c], perm[piv]);
    }
    const Complex d = a[c * n + c];
    logdet += std::log(std::abs(d));
    for (std::size_t r = c + 1; r < n; ++r) {
      const Complex f = a[r * n + c] / d;
      a[r * n + c] = f;
      for (std::size_t j = c + 1; j < n; ++j) a[r * n + j] -= f * a[c * n + j];
    }
  }
  return logdet;
}

/// exp of the real embedding [[S, -T], [T, S]] of the skew-Hermitian S + iT.
std::vector<Complex> random_unitary(std::size_t n, bool real, Rng& rng) {
  const std::size_t m = real ? n : 2 * n;
  std::vector<double> g(m * m, 0.0);
  auto set = [&](std::size_t i, std::size_t j, double v) { g[i * m + j] = v; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = rng.normal();
      set(i, j, s);
      set(j, i, -s);
      if (!real) {
        set(n + i, n + j, s);
        set(n + j, n + i, -s);
      }
    }
  }
  if (!real) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        const double t = rng.normal();
        set(n + i, j, t);
        set(n + j, i, t);
        set(i, n + j, -t);
        set(j, n + i, -t);
      }
    }
  }
  const DiffArray e = matrix_exp(DiffArray({m, m}, std::move(g)));
  std::vector<Complex> u(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      u[i * n + j] = real ? Complex(e[i * m + j], 0.0) : Complex(e[i * m + j], e[(n + i) * m + j]);
    }
  }
  return u;
}

}  // namespace

void fft_inplace(std::vector<Complex>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    radix2(a, inverse);
  } else {
    bluestein(a, inverse);
  }
}

std::vector<Complex> fft_ortho(std::vector<Complex> a, bool inverse) {
  fft_inplace(a, inverse);
  const double s = 1.0 / std::sqrt(static_cast<double>(a.size()));
  for (auto& v : a) v *= s;
  return a;
}

SpectralConv::SpectralConv(std::size_t in_channels, std::size_t out_channels, std::size_t length,
                           std::size_t kernel_size)
    : in_(in_channels), out_(out_channels), length_(length), k_(kernel_size) {
  if (in_ == 0 || out_ == 0 || length_ == 0) throw ConfigError("spectral conv extents must be positive");
  if (k_ == 0 || k_ > length_) throw ConfigError("kernel size must lie in 1..L");
  re_ = Parameter{"spectral.real", DiffArray::zeros({frequencies(), out_, in_})};
  im_ = Parameter{"spectral.imag", DiffArray::zeros({frequencies(), out_, in_})};
}

bool SpectralConv::self_conjugate(std::size_t f) const {
  return f == 0 || (length_ % 2 == 0 && f == length_ / 2);
}

Complex SpectralConv::weight(std::size_t f, std::size_t o, std::size_t i) const {
  const std::size_t nf = frequencies();
  const bool mirrored = f >= nf;
  const std::size_t g = mirrored ? length_ - f : f;
  const std::size_t idx = (g * out_ + o) * in_ + i;
  const Complex w(re_.value[idx], self_conjugate(g) ? 0.0 : im_.value[idx]);
  return mirrored ? std::conj(w) : w;
}

SpectralConv SpectralConv::from_kernel(const std::vector<double>& kernel, std::size_t in_channels,
                                       std::size_t out_channels, std::size_t kernel_size,
                                       std::size_t length) {
  if (kernel.size() != out_channels * in_channels * kernel_size) {
    throw DimensionError("spectral conv: kernel must be [out, in, k]");
  }
  SpectralConv s(in_channels, out_channels, length, kernel_size);
  const std::size_t nf = s.frequencies();
  std::vector<double> re(nf * out_channels * in_channels), im(re.size());
  std::vector<Complex> tap(length);
  for (std::size_t o = 0; o < out_channels; ++o) {
    for (std::size_t i = 0; i < in_channels; ++i) {
      std::fill(tap.begin(), tap.end(), Complex{});
      for (std::size_t t = 0; t < kernel_size; ++t) {
        tap[t] = kernel[(o * in_channels + i) * kernel_size + (kernel_size - 1 - t)];
      }
      std::vector<Complex> spec = tap;
      fft_inplace(spec, false);
      for (std::size_t f = 0; f < nf; ++f) {
        re[(f * out_channels + o) * in_channels + i] = spec[f].real();
        im[(f * out_channels + o) * in_channels + i] = s.self_conjugate(f) ? 0.0 : spec[f].imag();
      }
    }
  }
  s.re_.value = DiffArray({nf, out_channels, in_channels}, std::move(re));
  s.im_.value = DiffArray({nf, out_channels, in_channels}, std::move(im));
  return s;
}

SpectralConv SpectralConv::random_svd(std::size_t channels, std::size_t length,
                                      std::size_t kernel_size, Rng& rng, double log_sigma_std) {
  SpectralConv s(channels, channels, length, kernel_size);
  const std::size_t nf = s.frequencies(), c = channels;
  std::vector<double> re(nf * c * c), im(re.size());
  for (std::size_t f = 0; f < nf; ++f) {
    const bool real = s.self_conjugate(f);
    const auto u = random_unitary(c, real, rng);
    const auto v = random_unitary(c, real, rng);
    std::vector<double> sigma(c);
    for (auto& x : sigma) x = std::exp(log_sigma_std * rng.normal());
    for (std::size_t o = 0; o < c; ++o) {
      for (std::size_t i = 0; i < c; ++i) {
        Complex w{};
        for (std::size_t j = 0; j < c; ++j) w += v[o * c + j] * sigma[j] * u[j * c + i];
        re[(f * c + o) * c + i] = w.real();
        im[(f * c + o) * c + i] = real ? 0.0 : w.imag();
      }
    }
  }
  s.re_.value = DiffArray({nf, c, c}, std::move(re));
  s.im_.value = DiffArray({nf, c, c}, std::move(im));
  return s;
}

SpectralConv SpectralConv::identity(std::size_t channels, std::size_t length, std::size_t kernel_size) {
  SpectralConv s(channels, channels, length, kernel_size);
  const std::size_t nf = s.frequencies();
  std::vector<double> re(nf * channels * channels, 0.0);
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t i = 0; i < channels; ++i) re[(f * channels + i) * channels + i] = 1.0;
  s.re_.value = DiffArray({nf, channels, channels}, std::move(re));
  return s;
}

DiffArray SpectralConv::forward(const DiffArray& x, bool keep_all) const {
  if (x.rank() != 3 || x.dim(1) != in_ || x.dim(2) != length_) {
    throw DimensionError("spectral forward: expected [B, " + std::to_string(in_) + ", " +
                         std::to_string(length_) + "], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), l = length_;
  const std::size_t drop = keep_all ? 0 : k_ - 1;
  const std::size_t l_out = l - drop;
  std::vector<double> out(batch * out_ * l_out);
  std::vector<std::vector<Complex>> xf(in_);
  std::vector<Complex> zf(l);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < in_; ++i) {
      std::vector<Complex> row(l);
      for (std::size_t t = 0; t < l; ++t) row[t] = x[(b * in_ + i) * l + t];
      xf[i] = fft_ortho(std::move(row), false);
    }
    for (std::size_t o = 0; o < out_; ++o) {
      for (std::size_t f = 0; f < l; ++f) {
        Complex acc{};
        for (std::size_t i = 0; i < in_; ++i) acc += weight(f, o, i) * xf[i][f];
        zf[f] = acc;
      }
      const auto z = fft_ortho(zf, true);
      for (std::size_t t = 0; t < l_out; ++t) out[(b * out_ + o) * l_out + t] = z[t + drop].real();
    }
  }
  return DiffArray({batch, out_, l_out}, std::move(out));
}

DiffArray SpectralConv::inverse(const DiffArray& z) const {
  if (in_ != out_) throw DimensionError("spectral inverse needs in_channels == out_channels");
  if (z.rank() != 3 || z.dim(1) != out_ || z.dim(2) != length_) {
    throw DimensionError("spectral inverse: expected [B, " + std::to_string(out_) + ", " +
                         std::to_string(length_) + "], got " + shape_string(z.shape()));
  }
  const std::size_t batch = z.dim(0), l = length_, c = in_;
  // factor every frequency once
  std::vector<std::vector<Complex>> lu(l);
  std::vector<std::vector<std::size_t>> perm(l);
  for (std::size_t f = 0; f < l; ++f) {
    lu[f].resize(c * c);
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < c; ++i) lu[f][o * c + i] = weight(f, o, i);
    complex_lu(lu[f], perm[f], c);
  }
  std::vector<double> out(batch * c * l);
  std::vector<std::vector<Complex>> zf(c), xf(c, std::vector<Complex>(l));
  std::vector<Complex> rhs(c);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c; ++o) {
      std::vector<Complex> row(l);
      for (std::size_t t = 0; t < l; ++t) row[t] = z[(b * c + o) * l + t];
      zf[o] = fft_ortho(std::move(row), false);
    }
    for (std::size_t f = 0; f < l; ++f) {
      const auto& a = lu[f];
      for (std::size_t r = 0; r < c; ++r) rhs[r] = zf[perm[f][r]][f];
      for (std::size_t r = 0; r < c; ++r)
        for (std::size_t j = 0; j < r; ++j) rhs[r] -= a[r * c + j] * rhs[j];
      for (std::size_t r = c; r-- > 0;) {
        for (std::size_t j = r + 1; j < c; ++j) rhs[r] -= a[r * c + j] * rhs[j];
        rhs[r] /= a[r * c + r];
      }
      for (std::size_t i = 0; i < c; ++i) xf[i][f] = rhs[i];
    }
    for (std::size_t i = 0; i < c; ++i) {
      const auto x = fft_ortho(xf[i], true);
      for (std::size_t t = 0; t < l; ++t) out[(b * c + i) * l + t] = x[t].real();
    }
  }
  return DiffArray({batch, c, l}, std::move(out));
}

double SpectralConv::log_abs_det() const {
  if (in_ != out_) throw DimensionError("log-determinant needs a square channel map");
  const std::size_t c = in_;
  double total = 0.0;
  std::vector<Complex> a(c * c);
  std::vector<std::size_t> perm;
  for (std::size_t f = 0; f < length_; ++f) {
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < c; ++i) a[o * c + i] = weight(f, o, i);
    total += complex_lu(a, perm, c);
  }
  return total;
}

std::vector<double> SpectralConv::time_kernel(double* max_imag) const {
  const std::size_t l = length_;
  std::vector<double> h(out_ * in_ * l);
  double worst = 0.0;
  std::vector<Complex> spec(l);
  for (std::size_t o = 0; o < out_; ++o) {
    for (std::size_t i = 0; i < in_; ++i) {
      for (std::size_t f = 0; f < l; ++f) spec[f] = weight(f, o, i);
      std::vector<Complex> t = spec;
      fft_inplace(t, true);
      for (std::size_t tau = 0; tau < l; ++tau) {
        const Complex v = t[tau] / static_cast<double>(l);
        h[(o * in_ + i) * l + tau] = v.real();
        worst = std::max(worst, std::abs(v.imag()));
      }
    }
  }
  if (max_imag) *max_imag = worst;
  return h;
}

DiffArray SpectralConv::support_penalty(Context& ctx) const {
  const std::size_t l = length_, nf = frequencies(), pairs = out_ * in_;
  std::vector<double> cw(nf * l), sw(nf * l);
  for (std::size_t f = 0; f < nf; ++f) {
    const double mult = self_conjugate(f) ? 1.0 : 2.0;
    for (std::size_t tau = 0; tau < l; ++tau) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(f * tau % l) / static_cast<double>(l);
      cw[f * l + tau] = mult * std::cos(ang) / static_cast<double>(l);
      sw[f * l + tau] = self_conjugate(f) ? 0.0 : mult * std::sin(ang) / static_cast<double>(l);
    }
  }
  const DiffArray re = transpose(reshape(ctx.use(re_), {nf, pairs}));
  const DiffArray im = transpose(reshape(ctx.use(im_), {nf, pairs}));
  const DiffArray h = sub(matmul(re, DiffArray({nf, l}, std::move(cw))),
                          matmul(im, DiffArray({nf, l}, std::move(sw))));
  if (k_ >= l) return DiffArray::scalar(0.0);
  return sum(square(slice_last(h, k_, l)));
}

std::vector<double> direct_conv1d(const std::vector<double>& x, std::size_t batch,
                                  std::size_t in_channels, std::size_t length,
                                  const std::vector<double>& kernel, std::size_t out_channels,
                                  std::size_t kernel_size) {
  const std::size_t l_out = length - kernel_size + 1;
  std::vector<double> out(batch * out_channels * l_out, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out_channels; ++o)
      for (std::size_t t = 0; t < l_out; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in_channels; ++i)
          for (std::size_t j = 0; j < kernel_size; ++j)
            acc += kernel[(o * in_channels + i) * kernel_size + j] * x[(b * in_channels + i) * length + t + j];
        out[(b * out_channels + o) * l_out + t] = acc;
      }
  return out;
}

}  // namespace flowify
