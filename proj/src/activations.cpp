#include "flowify/activations.hpp"

#include <algorithm>
#include <cmath>

#include "flowify/errors.hpp"

namespace flowify {
namespace {

DiffArray flat_rows(const DiffArray& x, const Shape& per_sample, const char* who) {
  const std::size_t batch = batch_of(x, per_sample, who);
  return reshape(x, {batch, numel(per_sample)});
}

}  // namespace

// ---- LeakyReLU -----------------------------------------------------------------

LeakyReluFlow::LeakyReluFlow(Shape shape, double slope) : shape_(std::move(shape)), slope_(slope) {
  if (!(slope > 0.0)) throw ConfigError("leaky_relu slope must be positive");
}

LayerOutput LeakyReluFlow::forward(const DiffArray& x, Context&) {
  const std::size_t batch = batch_of(x, shape_, "leaky_relu");
  const std::size_t per = numel(shape_);
  std::vector<double> c(batch, 0.0);
  const double ls = std::log(slope_);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < per; ++i) negatives += x[b * per + i] < 0.0;
    c[b] = static_cast<double>(negatives) * ls;
  }
  return {leaky_relu(x, slope_), DiffArray({batch}, std::move(c))};
}

DiffArray LeakyReluFlow::inverse(const DiffArray& z, Context&, InverseMode) {
  batch_of(z, shape_, "leaky_relu inverse");
  return leaky_relu(z, 1.0 / slope_);
}

nlohmann::json LeakyReluFlow::describe() const {
  return {{"type", "leaky_relu"}, {"slope", slope_}};
}

// ---- rational-quadratic spline ---------------------------------------------------

RqSplineFlow::RqSplineFlow(const std::string& prefix, Shape shape, std::size_t bins, double bound)
    : shape_(std::move(shape)), features_(numel(shape_)), bins_(bins), bound_(bound) {
  if (bins < 2) throw ConfigError("rq_spline needs at least 2 bins");
  if (!(bound > 0.0)) throw ConfigError("rq_spline bound must be positive");
  if (kMinWidth * static_cast<double>(bins) >= 1.0) throw ConfigError("rq_spline: too many bins");
  // softplus(d) = 1 - min_d gives unit interior derivatives
  const double d0 = std::log(std::expm1(1.0 - kMinDerivative));
  raw_widths_ = Parameter{prefix + ".widths", DiffArray::zeros({features_, bins})};
  raw_heights_ = Parameter{prefix + ".heights", DiffArray::zeros({features_, bins})};
  raw_derivatives_ = Parameter{prefix + ".derivatives", DiffArray::full({features_, bins - 1}, d0)};
}

RqSplineFlow::Tables RqSplineFlow::tables(Context& ctx) const {
  const std::size_t k = bins_;
  std::vector<double> tri(k * (k + 1), 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j <= k; ++j) tri[i * (k + 1) + j] = 1.0;
  const DiffArray cumulative({k, k + 1}, std::move(tri));
  const double span = 2.0 * bound_;
  auto knots_from = [&](const DiffArray& raw, double min_bin) {
    const DiffArray bins =
        scale(add_scalar(scale(softmax_last(raw), 1.0 - min_bin * static_cast<double>(k)), min_bin), span);
    return add_scalar(matmul(bins, cumulative), -bound_);
  };
  Tables t;
  t.kx = knots_from(ctx.use(raw_widths_), kMinWidth);
  t.ky = knots_from(ctx.use(raw_heights_), kMinHeight);
  const DiffArray ones = DiffArray::full({features_, 1}, 1.0);
  t.kd = concat_last({ones, add_scalar(softplus(ctx.use(raw_derivatives_)), kMinDerivative), ones});
  return t;
}

RqSplineFlow::Knots RqSplineFlow::knots(std::size_t feature) const {
  Rng unused(0);
  Context ctx(nullptr, unused);
  const Tables t = tables(ctx);
  Knots out;
  const std::size_t w = bins_ + 1;
  for (std::size_t j = 0; j < w; ++j) {
    out.x.push_back(t.kx[feature * w + j]);
    out.y.push_back(t.ky[feature * w + j]);
    out.d.push_back(t.kd[feature * w + j]);
  }
  out.x.front() = out.y.front() = -bound_;
  out.x.back() = out.y.back() = bound_;
  return out;
}

LayerOutput RqSplineFlow::forward(const DiffArray& x_in, Context& ctx) {
  const DiffArray x = flat_rows(x_in, shape_, "rq_spline");
  const std::size_t batch = x.dim(0);
  const std::size_t f_count = features_;
  const std::size_t w = bins_ + 1;
  const Tables t = tables(ctx);

  auto lo = std::make_shared<std::vector<std::size_t>>(batch * f_count);
  auto hi = std::make_shared<std::vector<std::size_t>>(batch * f_count);
  std::vector<std::uint8_t> inside(batch * f_count);
  std::vector<double> safe(batch * f_count);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < f_count; ++f) {
      const std::size_t i = b * f_count + f;
      const double v = x[i];
      inside[i] = v >= -bound_ && v <= bound_;
      const double* row = t.kx.data() + f * w;
      std::size_t bin = 0;
      if (inside[i]) {
        bin = static_cast<std::size_t>(std::upper_bound(row + 1, row + bins_, v) - (row + 1));
      }
      (*lo)[i] = f * w + bin;
      (*hi)[i] = f * w + bin + 1;
      safe[i] = inside[i] ? 0.0 : row[0];
    }
  }
  const Shape s{batch, f_count};
  // outside the interval the spline is evaluated at the left knot and discarded
  const DiffArray xs = where(inside, x, DiffArray(s, std::move(safe)));
  const DiffArray x0 = gather(t.kx, lo, s), x1 = gather(t.kx, hi, s);
  const DiffArray y0 = gather(t.ky, lo, s), y1 = gather(t.ky, hi, s);
  const DiffArray d0 = gather(t.kd, lo, s), d1 = gather(t.kd, hi, s);
  const DiffArray width = sub(x1, x0);
  const DiffArray height = sub(y1, y0);
  const DiffArray slope = div(height, width);
  const DiffArray xi = div(sub(xs, x0), width);
  const DiffArray xi1 = mul(xi, add_scalar(neg(xi), 1.0));  // xi (1 - xi)
  const DiffArray numer = mul(height, add(mul(slope, square(xi)), mul(d0, xi1)));
  const DiffArray denom = add(slope, mul(sub(add(d1, d0), scale(slope, 2.0)), xi1));
  const DiffArray y = add(y0, div(numer, denom));
  const DiffArray one_minus = add_scalar(neg(xi), 1.0);
  const DiffArray dnum = mul(square(slope), add(add(mul(d1, square(xi)), scale(mul(slope, xi1), 2.0)),
                                                mul(d0, square(one_minus))));
  const DiffArray logdet = sub(log(dnum), scale(log(denom), 2.0));
  const DiffArray z = where(inside, y, x);
  const DiffArray c = sum_rows(where(inside, logdet, DiffArray::zeros(s)));
  return {reshape(z, with_batch(batch, shape_)), c};
}

DiffArray RqSplineFlow::inverse(const DiffArray& z_in, Context& ctx, InverseMode) {
  const std::size_t batch = batch_of(z_in, shape_, "rq_spline inverse");
  const std::size_t f_count = features_;
  const std::size_t w = bins_ + 1;
  Context plain(nullptr, ctx.rng());
  const Tables t = tables(plain);
  std::vector<double> out(batch * f_count);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < f_count; ++f) {
      const std::size_t i = b * f_count + f;
      const double v = z_in[i];
      if (v < -bound_ || v > bound_) {
        out[i] = v;
        continue;
      }
      const double* kx = t.kx.data() + f * w;
      const double* ky = t.ky.data() + f * w;
      const double* kd = t.kd.data() + f * w;
      const std::size_t k = static_cast<std::size_t>(std::upper_bound(ky + 1, ky + bins_, v) - (ky + 1));
      const double wk = kx[k + 1] - kx[k];
      const double hk = ky[k + 1] - ky[k];
      const double sk = hk / wk;
      const double dy = v - ky[k];
      const double mix = kd[k + 1] + kd[k] - 2.0 * sk;
      const double qa = hk * (sk - kd[k]) + dy * mix;
      const double qb = hk * kd[k] - dy * mix;
      const double qc = -sk * dy;
      const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
      const double xi = (2.0 * qc) / (-qb - std::sqrt(disc));
      out[i] = kx[k] + xi * wk;
    }
  }
  return DiffArray(z_in.shape(), std::move(out));
}

nlohmann::json RqSplineFlow::describe() const {
  return {{"type", "rq_spline"}, {"bins", bins_}, {"bound", bound_}};
}

// ---- probit ------------------------------------------------------------------------

LayerOutput ProbitFlow::forward(const DiffArray& x, Context&) {
  const std::size_t batch = batch_of(x, shape_, "probit");
  for (double v : x.values()) {
    if (!(v > 0.0 && v < 1.0)) throw DataError("probit input must lie in (0, 1)");
  }
  const DiffArray z = probit(x);
  return {z, neg(standard_normal_logpdf(reshape(z, {batch, numel(shape_)})))};
}

DiffArray ProbitFlow::inverse(const DiffArray& z, Context&, InverseMode) {
  batch_of(z, shape_, "probit inverse");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal_cdf(z[i]);
  return DiffArray(z.shape(), std::move(out));
}

// ---- flatten ---------------------------------------------------------------------------

LayerOutput FlattenFlow::forward(const DiffArray& x, Context&) {
  const std::size_t batch = batch_of(x, shape_, "flatten");
  return {reshape(x, {batch, numel(shape_)}), DiffArray::zeros({batch})};
}

DiffArray FlattenFlow::inverse(const DiffArray& z, Context&, InverseMode) {
  const std::size_t batch = batch_of(z, {numel(shape_)}, "flatten inverse");
  return reshape(z, with_batch(batch, shape_));
}

}  // namespace flowify
