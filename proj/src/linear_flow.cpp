#include "flowify/linear_flow.hpp"

#include <algorithm>

#include "flowify/errors.hpp"

namespace flowify {

Regime regime_for(std::size_t in_dim, std::size_t out_dim) {
  if (out_dim < in_dim) return Regime::decreasing;
  if (out_dim > in_dim) return Regime::increasing;
  return Regime::preserving;
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::decreasing:
      return "dimension-decreasing";
    case Regime::preserving:
      return "dimension-preserving";
    case Regime::increasing:
      return "dimension-increasing";
  }
  return "?";
}

std::string inverse_kind_name(InverseDensity::Kind k) {
  return k == InverseDensity::Kind::fixed ? "fixed" : "conditional";
}

InverseDensity::Kind parse_inverse_kind(const std::string& name) {
  if (name == "fixed") return InverseDensity::Kind::fixed;
  if (name == "conditional") return InverseDensity::Kind::conditional;
  throw ConfigError("unknown inverse density kind '" + name + "'");
}

// ---- InverseDensity --------------------------------------------------------

InverseDensity::InverseDensity(Kind kind, const std::string& prefix, std::size_t kept,
                               std::size_t dropped, Rng& rng, double fixed_log_std)
    : kind_(kind), kept_(kept), dropped_(dropped), fixed_log_std_(fixed_log_std) {
  if (kind_ == Kind::conditional) {
    const std::size_t hidden = 2 * std::max<std::size_t>(8, dropped);
    net_ = SmallMlp(prefix + ".net", {kept, hidden, hidden, 2 * dropped}, 0.01, rng);
  }
}

std::pair<DiffArray, DiffArray> InverseDensity::params(const DiffArray& condition,
                                                       Context& ctx) const {
  const std::size_t batch = condition.dim(0);
  if (kind_ == Kind::fixed) {
    return {DiffArray::zeros({batch, dropped_}),
            DiffArray::full({batch, dropped_},
                            std::clamp(fixed_log_std_, -kLogStdLimit, kLogStdLimit))};
  }
  const DiffArray out = net_.apply(condition, ctx);
  return {slice_last(out, 0, dropped_),
          clamp(slice_last(out, dropped_, 2 * dropped_), -kLogStdLimit, kLogStdLimit)};
}

DiffArray InverseDensity::log_prob(const DiffArray& dropped, const DiffArray& condition,
                                   Context& ctx) const {
  auto [mu, log_std] = params(condition, ctx);
  return gaussian_logpdf(dropped, mu, log_std);
}

DiffArray InverseDensity::draw(const DiffArray& condition, Context& ctx, InverseMode mode) const {
  auto [mu, log_std] = params(condition, ctx);
  if (mode == InverseMode::mean) return mu;
  const DiffArray eps = standard_normal(mu.shape(), ctx.rng());
  return add(mu, mul(exp(log_std), eps));
}

std::vector<Parameter*> InverseDensity::parameters() { return net_.parameters(); }

// ---- SvdLinear ---------------------------------------------------------------

SvdLinear::SvdLinear(const std::string& prefix, std::size_t in_dim, std::size_t out_dim, Rng& rng,
                     SvdLinearOptions options)
    : in_(in_dim), out_(out_dim), options_(options) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("linear layer dimensions must be positive");
  u_ = RotationParam(prefix + ".u_gen", in_dim, options.rotation_init_std, rng);
  v_ = RotationParam(prefix + ".v_gen", out_dim, options.rotation_init_std, rng);
  // length min(n, m) when m <= n, m when m > n
  log_sigma_ = Parameter{prefix + ".log_sigma", DiffArray::zeros({out_dim})};
  bias_ = Parameter{prefix + ".bias", DiffArray::zeros({out_dim})};
  if (out_dim > in_dim) {
    aug_log_scale_ = Parameter{prefix + ".aug_log_scale", DiffArray::scalar(0.0)};
  }
  if (out_dim < in_dim) {
    inverse_model_ = InverseDensity(options.inverse, prefix + ".inverse", out_dim,
                                    in_dim - out_dim, rng, options.fixed_log_std);
  }
}

void SvdLinear::require(Regime r, const char* op) const {
  if (regime() != r) {
    throw RegimeError(std::string(op) + " requires a " + regime_name(r) + " layer, this one is " +
                      std::to_string(in_) + " -> " + std::to_string(out_));
  }
}

DiffArray SvdLinear::sigma_sum(Context& ctx) const { return sum(ctx.use(log_sigma_)); }

LayerOutput SvdLinear::forward(const DiffArray& x, Context& ctx) const {
  switch (regime()) {
    case Regime::decreasing:
      return forward_decreasing(x, ctx);
    case Regime::preserving:
      return forward_preserving(x, ctx);
    case Regime::increasing:
      return forward_increasing(x, ctx);
  }
  throw RegimeError("unreachable");
}

DiffArray SvdLinear::inverse(const DiffArray& z, Context& ctx, InverseMode mode) const {
  switch (regime()) {
    case Regime::decreasing:
      return inverse_decreasing(z, ctx, mode);
    case Regime::preserving:
      return inverse_preserving(z, ctx);
    case Regime::increasing:
      return inverse_increasing(z, ctx);
  }
  throw RegimeError("unreachable");
}

LayerOutput SvdLinear::forward_decreasing(const DiffArray& x, Context& ctx) const {
  require(Regime::decreasing, "forward_decreasing");
  const DiffArray h = u_.apply(x, ctx);
  const DiffArray sigma = exp(ctx.use(log_sigma_));
  const DiffArray scaled = mul(slice_last(h, 0, out_), sigma);
  const DiffArray dropped = slice_last(h, out_, in_);
  const DiffArray z = add(v_.apply(scaled, ctx), ctx.use(bias_));
  const DiffArray c = add(inverse_model_->log_prob(dropped, scaled, ctx), sigma_sum(ctx));
  return {z, c};
}

LayerOutput SvdLinear::forward_preserving(const DiffArray& x, Context& ctx) const {
  require(Regime::preserving, "forward_preserving");
  const DiffArray sigma = exp(ctx.use(log_sigma_));
  const DiffArray z = add(v_.apply(mul(u_.apply(x, ctx), sigma), ctx), ctx.use(bias_));
  const DiffArray c = add(DiffArray::zeros({x.dim(0)}), sigma_sum(ctx));
  return {z, c};
}

LayerOutput SvdLinear::forward_increasing(const DiffArray& x, Context& ctx) const {
  require(Regime::increasing, "forward_increasing");
  const std::size_t batch = x.dim(0);
  const DiffArray h = u_.apply(x, ctx);
  const DiffArray log_scale = ctx.use(*aug_log_scale_);
  const DiffArray noise = mul(standard_normal({batch, out_ - in_}, ctx.rng()), exp(log_scale));
  const DiffArray sigma = exp(ctx.use(log_sigma_));
  const DiffArray z =
      add(v_.apply(mul(concat_last({h, noise}), sigma), ctx), ctx.use(bias_));
  const DiffArray c =
      add(neg(gaussian_logpdf(noise, DiffArray::scalar(0.0), log_scale)), sigma_sum(ctx));
  return {z, c};
}

DiffArray SvdLinear::inverse_decreasing(const DiffArray& z, Context& ctx, InverseMode mode) const {
  require(Regime::decreasing, "inverse_decreasing");
  const DiffArray scaled = v_.apply_inverse(sub(z, ctx.use(bias_)), ctx);
  const DiffArray kept = div(scaled, exp(ctx.use(log_sigma_)));
  const DiffArray dropped = inverse_model_->draw(scaled, ctx, mode);
  return u_.apply_inverse(concat_last({kept, dropped}), ctx);
}

DiffArray SvdLinear::inverse_preserving(const DiffArray& z, Context& ctx) const {
  require(Regime::preserving, "inverse_preserving");
  const DiffArray scaled = v_.apply_inverse(sub(z, ctx.use(bias_)), ctx);
  return u_.apply_inverse(div(scaled, exp(ctx.use(log_sigma_))), ctx);
}

DiffArray SvdLinear::inverse_increasing(const DiffArray& z, Context& ctx) const {
  require(Regime::increasing, "inverse_increasing");
  const DiffArray scaled = v_.apply_inverse(sub(z, ctx.use(bias_)), ctx);
  const DiffArray unscaled = div(scaled, exp(ctx.use(log_sigma_)));
  return u_.apply_inverse(slice_last(unscaled, 0, in_), ctx);
}

DiffArray SvdLinear::mean_weight(Context& ctx) const {
  const DiffArray u = u_.materialize(ctx);
  const DiffArray v = v_.materialize(ctx);
  const DiffArray sigma = exp(ctx.use(log_sigma_));
  // (Sigma_{m x n} U)^T: the first min(m, n) rows of U scaled by sigma, zero rows beyond
  const std::size_t k = std::min(in_, out_);
  DiffArray su_t = mul(slice_last(transpose(u), 0, k), slice_last(reshape(sigma, {1, out_}), 0, k));
  if (k < out_) su_t = concat_last({su_t, DiffArray::zeros({in_, out_ - k})});
  return matmul(v, su_t, false, true);
}

std::vector<Parameter*> SvdLinear::parameters() {
  std::vector<Parameter*> out{&u_.generator(), &v_.generator(), &log_sigma_, &bias_};
  if (aug_log_scale_) out.push_back(&*aug_log_scale_);
  if (inverse_model_) {
    for (auto* p : inverse_model_->parameters()) out.push_back(p);
  }
  return out;
}

// ---- LinearFlowLayer ---------------------------------------------------------

LinearFlowLayer::LinearFlowLayer(const std::string& prefix, std::size_t in_dim,
                                 std::size_t out_dim, Rng& rng, SvdLinearOptions options)
    : linear_(prefix, in_dim, out_dim, rng, options) {}

LayerOutput LinearFlowLayer::forward(const DiffArray& x, Context& ctx) {
  batch_of(x, input_shape(), "linear");
  return linear_.forward(x, ctx);
}

DiffArray LinearFlowLayer::inverse(const DiffArray& z, Context& ctx, InverseMode mode) {
  batch_of(z, output_shape(), "linear inverse");
  return linear_.inverse(z, ctx, mode);
}

nlohmann::json LinearFlowLayer::describe() const {
  nlohmann::json j{{"type", "linear"}, {"out", linear_.out_dim()}};
  if (linear_.regime() == Regime::decreasing) {
    j["inverse"] = inverse_kind_name(linear_.options().inverse);
    if (linear_.options().inverse == InverseDensity::Kind::fixed) {
      j["fixed_log_std"] = linear_.options().fixed_log_std;
    }
  }
  return j;
}

}  // namespace flowify
