#include "flowify/repeat_unfold.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "flowify/errors.hpp"

namespace flowify {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require_image(const DiffArray& x, const UnfoldSpec& s, const char* who) {
  if (x.rank() != 4 || x.dim(1) != s.channels || x.dim(2) != s.padded_h() ||
      x.dim(3) != s.padded_w()) {
    throw DimensionError(std::string(who) + ": expected [B, " + std::to_string(s.channels) +
                         ", " + std::to_string(s.padded_h()) + ", " +
                         std::to_string(s.padded_w()) + "], got " + shape_string(x.shape()));
  }
}

}  // namespace

std::string noise_kind_name(NoiseKind k) {
  return k == NoiseKind::normal ? "normal" : "uniform";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "normal") return NoiseKind::normal;
  if (name == "uniform" || name == "uniform_ball") return NoiseKind::uniform_ball;
  throw ConfigError("unknown noise kind '" + name + "' (expected normal or uniform)");
}

double log_unit_ball_volume(std::size_t k) {
  const double h = 0.5 * static_cast<double>(k);
  return h * std::log(std::numbers::pi) - std::lgamma(h + 1.0);
}

void UnfoldSpec::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw SpecError("image extents must be positive");
  if (kernel_h == 0 || kernel_w == 0) throw SpecError("kernel extents must be positive");
  if (stride_h == 0 || stride_w == 0) throw SpecError("strides must be positive");
  if (kernel_h > padded_h() || kernel_w > padded_w()) {
    throw SpecError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                    " is larger than the padded image " + std::to_string(padded_h()) + "x" +
                    std::to_string(padded_w()));
  }
}

UnfoldPlan::UnfoldPlan(const UnfoldSpec& spec) : spec_(spec) {
  spec_.validate();
  const std::size_t hp = spec_.padded_h(), wp = spec_.padded_w();
  const std::size_t kh = spec_.kernel_h, kw = spec_.kernel_w;
  source_.reserve(spec_.patch_count() * spec_.patch_size());
  for (std::size_t oy = 0; oy < spec_.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec_.out_w(); ++ox) {
      for (std::size_t c = 0; c < spec_.channels; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            source_.push_back(c * hp * wp + (oy * spec_.stride_h + i) * wp + ox * spec_.stride_w + j);
          }
        }
      }
    }
  }
  // N = fold(unfold(ones))
  const DiffArray ones = DiffArray::full({1, spec_.channels, hp, wp}, 1.0);
  // non-owning handle so the plan can use its own gather map while under construction
  auto self = std::shared_ptr<const UnfoldPlan>(this, [](const UnfoldPlan*) {});
  const DiffArray counts = fold_sum(unfold_values(ones, self), self);
  multiplicity_.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    multiplicity_[i] = static_cast<std::size_t>(std::llround(counts[i]));
  }
}

bool UnfoldPlan::covers_interior() const {
  const std::size_t hp = spec_.padded_h(), wp = spec_.padded_w();
  for (std::size_t c = 0; c < spec_.channels; ++c) {
    for (std::size_t y = spec_.pad_h; y < spec_.pad_h + spec_.height; ++y) {
      for (std::size_t x = spec_.pad_w; x < spec_.pad_w + spec_.width; ++x) {
        if (multiplicity_[c * hp * wp + y * wp + x] == 0) return false;
      }
    }
  }
  return true;
}

DiffArray unfold_values(const DiffArray& padded, const UnfoldPlanPtr& plan) {
  const UnfoldSpec& s = plan->spec();
  require_image(padded, s, "unfold");
  const std::size_t batch = padded.dim(0);
  const std::size_t per = s.padded_numel();
  const std::size_t per_out = plan->source().size();
  const auto& src = plan->source();
  std::vector<double> out(batch * per_out);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = padded.data() + b * per;
    double* o = out.data() + b * per_out;
    for (std::size_t i = 0; i < per_out; ++i) o[i] = x[src[i]];
  }
  return Tape::record({batch * s.patch_count(), s.patch_size()}, std::move(out), {&padded},
                      [padded, plan, batch, per, per_out](std::span<const double> g, Tape& t) {
                        const auto& idx = plan->source();
                        std::vector<double> gx(batch * per, 0.0);
                        for (std::size_t b = 0; b < batch; ++b) {
                          const double* gi = g.data() + b * per_out;
                          double* go = gx.data() + b * per;
                          for (std::size_t i = 0; i < per_out; ++i) go[idx[i]] += gi[i];
                        }
                        t.accumulate(padded, gx);
                      });
}

DiffArray fold_sum(const DiffArray& patches, const UnfoldPlanPtr& plan) {
  const UnfoldSpec& s = plan->spec();
  if (patches.rank() != 2 || patches.dim(1) != s.patch_size() ||
      patches.dim(0) % s.patch_count() != 0) {
    throw DimensionError("fold: expected [B * " + std::to_string(s.patch_count()) + ", " +
                         std::to_string(s.patch_size()) + "], got " +
                         shape_string(patches.shape()));
  }
  const std::size_t batch = patches.dim(0) / s.patch_count();
  const std::size_t per = s.padded_numel();
  const std::size_t per_in = plan->source().size();
  const auto& src = plan->source();
  std::vector<double> out(batch * per, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = patches.data() + b * per_in;
    double* o = out.data() + b * per;
    for (std::size_t i = 0; i < per_in; ++i) o[src[i]] += p[i];
  }
  return Tape::record({batch, s.channels, s.padded_h(), s.padded_w()}, std::move(out), {&patches},
                      [patches, plan, batch, per, per_in](std::span<const double> g, Tape& t) {
                        const auto& idx = plan->source();
                        std::vector<double> gp(batch * per_in);
                        for (std::size_t b = 0; b < batch; ++b) {
                          const double* gi = g.data() + b * per;
                          double* go = gp.data() + b * per_in;
                          for (std::size_t i = 0; i < per_in; ++i) go[i] = gi[idx[i]];
                        }
                        t.accumulate(patches, gp);
                      });
}

DiffArray fold_mean(const DiffArray& patches, const UnfoldPlanPtr& plan) {
  const auto& mult = plan->multiplicity();
  std::vector<double> inv(mult.size());
  for (std::size_t i = 0; i < mult.size(); ++i) inv[i] = mult[i] ? 1.0 / static_cast<double>(mult[i]) : 0.0;
  const UnfoldSpec& s = plan->spec();
  return mul(fold_sum(patches, plan),
             DiffArray({1, s.channels, s.padded_h(), s.padded_w()}, std::move(inv)));
}

// ---- single-coordinate repetition ----------------------------------------------

DiffArray diagonal_complement_basis(std::size_t n) {
  if (n == 0) throw SpecError("repetition count must be at least 1");
  std::vector<double> h((n - 1) * n, 0.0);
  for (std::size_t k = 1; k < n; ++k) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
    double* row = h.data() + (k - 1) * n;
    for (std::size_t i = 0; i < k; ++i) row[i] = norm;
    row[k] = -static_cast<double>(k) * norm;
  }
  return DiffArray({n - 1, n}, std::move(h));
}

DiffArray repeat_noise_neg_logp(const DiffArray& u, NoiseKind kind, const DiffArray& log_scale) {
  const std::size_t rows = u.dim(0);
  const std::size_t k = u.rank() > 1 ? u.dim(1) : 0;
  if (k == 0) return DiffArray::zeros({rows});
  if (kind == NoiseKind::normal) return neg(gaussian_logpdf(u, DiffArray::scalar(0.0), log_scale));
  // uniform on the k-ball of radius s: density 1 / (V_k s^k) inside, 0 outside
  const double radius = std::exp(log_scale.item());
  std::vector<double> base(rows, log_unit_ball_volume(k));
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) n2 += u[r * k + j] * u[r * k + j];
    if (std::sqrt(n2) > radius * (1.0 + 1e-12)) base[r] = std::numeric_limits<double>::infinity();
  }
  return add(DiffArray({rows}, std::move(base)), scale(log_scale, static_cast<double>(k)));
}

RepeatOutput repeat_coordinate_with(const DiffArray& x, std::size_t n, NoiseKind kind,
                                    const DiffArray& u, const DiffArray& log_scale) {
  if (n == 0) throw SpecError("repetition count must be at least 1");
  if (x.rank() != 1) throw DimensionError("repeat_coordinate: expected [B], got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0);
  if (u.rank() != 2 || u.dim(0) != rows || u.dim(1) != n - 1) {
    throw DimensionError("repeat_coordinate: noise must be [B, N - 1], got " + shape_string(u.shape()));
  }
  const DiffArray diag = matmul(reshape(x, {rows, 1}), DiffArray::full({1, n}, 1.0));
  if (n == 1) return {diag, DiffArray::zeros({rows}), u};
  const double nn = static_cast<double>(n);
  const DiffArray noise = scale(matmul(u, diagonal_complement_basis(n)), std::sqrt(nn));
  const DiffArray c = add_scalar(repeat_noise_neg_logp(u, kind, log_scale), 0.5 * nn * std::log(nn));
  return {add(diag, noise), c, u};
}

RepeatOutput repeat_coordinate(const DiffArray& x, std::size_t n, NoiseKind kind, Rng& rng,
                               const DiffArray& log_scale) {
  if (n == 0) throw SpecError("repetition count must be at least 1");
  const std::size_t rows = x.rank() ? x.dim(0) : 0;
  const std::size_t k = n - 1;
  std::vector<double> u0(rows * k);
  for (std::size_t r = 0; r < rows && k > 0; ++r) {
    double* row = u0.data() + r * k;
    for (std::size_t j = 0; j < k; ++j) row[j] = rng.normal();
    if (kind == NoiseKind::uniform_ball) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < k; ++j) n2 += row[j] * row[j];
      const double radius = std::pow(rng.uniform(), 1.0 / static_cast<double>(k));
      for (std::size_t j = 0; j < k; ++j) row[j] *= radius / std::sqrt(n2);
    }
  }
  const DiffArray u = mul(DiffArray({rows, k}, std::move(u0)), exp(log_scale));
  return repeat_coordinate_with(x, n, kind, u, log_scale);
}

DiffArray repeat_inverse(const DiffArray& z) {
  if (z.rank() != 2 || z.dim(1) == 0) {
    throw DimensionError("repeat_inverse: expected [B, N], got " + shape_string(z.shape()));
  }
  return scale(sum_axis(z, 1), 1.0 / static_cast<double>(z.dim(1)));
}

// ---- unfold with orthogonal noise -------------------------------------------------

UnfoldOutput unfold(const DiffArray& padded, const UnfoldPlanPtr& plan, NoiseKind kind, Rng& rng,
                    const DiffArray& log_scale) {
  const UnfoldSpec& s = plan->spec();
  require_image(padded, s, "unfold");
  const std::size_t batch = padded.dim(0);
  const std::size_t per = s.padded_numel();
  const std::size_t per_out = plan->source().size();
  const auto& src = plan->source();
  const auto& mult = plan->multiplicity();

  const DiffArray base = unfold_values(padded, plan);

  bool any_repeat = false;
  double log_scale_weight = 0.0;  // sum over repeated pixels of (N - 1)
  double fixed = 0.0;             // per-image terms that do not depend on the draw
  for (std::size_t p = 0; p < per; ++p) {
    if (mult[p] < 2) continue;
    any_repeat = true;
    const double n = static_cast<double>(mult[p]);
    log_scale_weight += n - 1.0;
    fixed += 0.5 * n * std::log(n);
    fixed += kind == NoiseKind::normal ? (n - 1.0) * kHalfLog2Pi : log_unit_ball_volume(mult[p] - 1);
  }
  if (!any_repeat) return {base, DiffArray::zeros({batch})};

  std::vector<double> w(batch * per_out);
  std::vector<double> row_terms(batch, fixed);
  std::vector<double> mean(per), norm2(per), amp(per);
  for (std::size_t b = 0; b < batch; ++b) {
    double* wb = w.data() + b * per_out;
    for (std::size_t i = 0; i < per_out; ++i) wb[i] = rng.normal();
    // center per input pixel, then normalize per input pixel
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t i = 0; i < per_out; ++i) mean[src[i]] += wb[i];
    for (std::size_t p = 0; p < per; ++p) {
      if (mult[p]) mean[p] /= static_cast<double>(mult[p]);
    }
    std::fill(norm2.begin(), norm2.end(), 0.0);
    for (std::size_t i = 0; i < per_out; ++i) {
      wb[i] -= mean[src[i]];
      norm2[src[i]] += wb[i] * wb[i];
    }
    for (std::size_t p = 0; p < per; ++p) {
      if (mult[p] < 2) {
        amp[p] = 0.0;
        continue;
      }
      const double k = static_cast<double>(mult[p] - 1);
      double a;
      if (kind == NoiseKind::normal) {
        a = std::sqrt(rng.chi_squared(k));
        row_terms[b] += 0.5 * a * a;
      } else {
        a = std::pow(rng.uniform(), 1.0 / k);
      }
      amp[p] = a * std::sqrt(static_cast<double>(mult[p])) / std::sqrt(norm2[p]);
    }
    for (std::size_t i = 0; i < per_out; ++i) wb[i] *= amp[src[i]];
  }
  const DiffArray noise = mul(DiffArray(base.shape(), std::move(w)), exp(log_scale));
  const DiffArray c = add(DiffArray({batch}, std::move(row_terms)), scale(log_scale, log_scale_weight));
  return {add(base, noise), c};
}

// ---- padding ---------------------------------------------------------------------------

PadOutput pad_flow(const DiffArray& x, std::size_t pad_h, std::size_t pad_w, Rng& rng,
                   const DiffArray& log_scale, const std::vector<std::uint8_t>* fill) {
  if (x.rank() != 4) throw DimensionError("pad: expected [B, C, H, W], got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (pad_h == 0 && pad_w == 0) return {x, DiffArray::zeros({batch})};
  const std::size_t hp = h + 2 * pad_h, wp = wd + 2 * pad_w;
  const std::size_t per = ch * hp * wp;
  if (fill && fill->size() != per) throw DimensionError("pad: fill mask has the wrong size");

  auto interior = std::make_shared<std::vector<std::size_t>>();
  auto border = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < hp; ++y) {
      for (std::size_t xx = 0; xx < wp; ++xx) {
        const std::size_t off = c * hp * wp + y * wp + xx;
        const bool inside = y >= pad_h && y < pad_h + h && xx >= pad_w && xx < pad_w + wd;
        if (inside) {
          interior->push_back(off);
        } else if (!fill || (*fill)[off]) {
          border->push_back(off);
        }
      }
    }
  }
  const std::size_t nb = border->size();
  const DiffArray u = mul(standard_normal({batch, nb}, rng), exp(log_scale));
  const std::size_t ni = interior->size();

  std::vector<double> out(batch * per, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < ni; ++i) out[b * per + (*interior)[i]] = x[b * ni + i];
    for (std::size_t i = 0; i < nb; ++i) out[b * per + (*border)[i]] = u[b * nb + i];
  }
  DiffArray padded = Tape::record(
      {batch, ch, hp, wp}, std::move(out), {&x, &u},
      [x, u, interior, border, batch, per](std::span<const double> g, Tape& t) {
        const std::size_t ni = interior->size(), nb = border->size();
        if (t.wants(x)) {
          std::vector<double> gx(batch * ni);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < ni; ++i) gx[b * ni + i] = g[b * per + (*interior)[i]];
          t.accumulate(x, gx);
        }
        if (t.wants(u)) {
          std::vector<double> gu(batch * nb);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < nb; ++i) gu[b * nb + i] = g[b * per + (*border)[i]];
          t.accumulate(u, gu);
        }
      });
  const DiffArray c = nb ? neg(gaussian_logpdf(u, DiffArray::scalar(0.0), log_scale))
                         : DiffArray::zeros({batch});
  return {padded, c};
}

DiffArray crop(const DiffArray& padded, std::size_t pad_h, std::size_t pad_w) {
  if (padded.rank() != 4) {
    throw DimensionError("crop: expected [B, C, H, W], got " + shape_string(padded.shape()));
  }
  if (pad_h == 0 && pad_w == 0) return padded;
  const std::size_t batch = padded.dim(0), ch = padded.dim(1), hp = padded.dim(2), wp = padded.dim(3);
  if (hp < 2 * pad_h + 1 || wp < 2 * pad_w + 1) throw SpecError("crop: padding exceeds the image");
  const std::size_t h = hp - 2 * pad_h, w = wp - 2 * pad_w;
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(batch * ch * h * w);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          index->push_back(((b * ch + c) * hp + y + pad_h) * wp + x + pad_w);
  return gather(padded, index, {batch, ch, h, w});
}

}  // namespace flowify
