#include "flowify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowify/config.hpp"
#include "flowify/errors.hpp"
#include "flowify/fft_conv.hpp"
#include "flowify/linear_flow.hpp"
#include "flowify/repeat_unfold.hpp"
#include "flowify/rotations.hpp"

namespace flowify {
namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

CheckResult at_most(std::string suite, std::string name, double measured, double tol,
                    std::string detail = {}) {
  return {std::move(suite), std::move(name), measured <= tol, measured, tol, std::move(detail)};
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

/// log|det A| and sign by partial-pivoting LU, A is d x d row-major.
std::pair<double, double> log_det(std::vector<double> a, std::size_t d) {
  double logdet = 0.0, sign = 1.0;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(a[r * d + c]) > std::abs(a[p * d + c])) p = r;
    if (a[p * d + c] == 0.0) return {-std::numeric_limits<double>::infinity(), 0.0};
    if (p != c) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[c * d + j], a[p * d + j]);
      sign = -sign;
    }
    const double piv = a[c * d + c];
    if (piv < 0) sign = -sign;
    logdet += std::log(std::abs(piv));
    for (std::size_t r = c + 1; r < d; ++r) {
      const double f = a[r * d + c] / piv;
      for (std::size_t j = c; j < d; ++j) a[r * d + j] -= f * a[c * d + j];
    }
  }
  return {logdet, sign};
}

SvdLinear random_linear(std::size_t n, std::size_t m, Rng& rng) {
  SvdLinear layer("lin", n, m, rng);
  randomize_parameters(layer.parameters(), rng, 0.5);
  return layer;
}

std::vector<CheckResult> suite_theorem1(const VerifyOptions& o) {
  Rng rng(mix_seed(o.seed, 1));
  double worst = 0.0;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, o.trials); ++t) {
    const std::size_t n = pick(rng, 2, 16), m = pick(rng, 1, n - 1);
    SvdLinear layer = random_linear(n, m, rng);
    Context ctx(nullptr, rng);
    const DiffArray z = standard_normal({4, m}, rng);
    const DiffArray x = layer.inverse(z, ctx, InverseMode::stochastic);
    worst = std::max(worst, max_abs_diff(layer.forward(x, ctx).z.values(), z.values()));
  }
  return {at_most("theorem1", "decreasing: |L(L^-1 z) - z|_inf", worst, 1e-8)};
}

std::vector<CheckResult> suite_theorem2(const VerifyOptions& o) {
  Rng rng(mix_seed(o.seed, 2));
  double worst = 0.0;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, o.trials); ++t) {
    const std::size_t m = pick(rng, 2, 16), n = pick(rng, 1, m - 1);
    SvdLinear layer = random_linear(n, m, rng);
    Context ctx(nullptr, rng);
    const DiffArray x = standard_normal({4, n}, rng);
    const DiffArray back = layer.inverse(layer.forward(x, ctx).z, ctx, InverseMode::mean);
    worst = std::max(worst, max_abs_diff(back.values(), x.values()));
  }
  return {at_most("theorem2", "increasing: |L^-1(L(x)) - x|_inf", worst, 1e-8)};
}

std::vector<CheckResult> suite_rotations(const VerifyOptions& o) {
  Rng rng(mix_seed(o.seed, 3));
  double orth = 0.0, det = 0.0, contrib = 0.0;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, o.trials); ++t) {
    const std::size_t d = pick(rng, 1, 32);
    RotationParam rot("rot", d, 1.0, rng);
    Context ctx(nullptr, rng);
    const DiffArray r = rot.materialize(ctx);
    const DiffArray rtr = matmul(r, r, true, false);
    orth = std::max(orth, max_abs_diff(rtr.values(), DiffArray::identity(d).values()));
    const auto [ld, sign] = log_det(r.to_vector(), d);
    det = std::max(det, std::abs(sign * std::exp(ld) - 1.0));
    contrib = std::max(contrib, std::abs(ld));
  }
  return {at_most("rotations", "|R^T R - I|_inf", orth, 1e-8),
          at_most("rotations", "|det R - 1|", det, 1e-6),
          at_most("rotations", "|log|det R||", contrib, 1e-8)};
}

std::vector<CheckResult> suite_repetition(const VerifyOptions& o) {
  Rng rng(mix_seed(o.seed, 4));
  double contrib = 0.0, inverse = 0.0;
  for (std::size_t n = 2; n <= 8; ++n) {
    for (NoiseKind kind : {NoiseKind::normal, NoiseKind::uniform_ball}) {
      const DiffArray x = standard_normal({16}, rng);
      const RepeatOutput r = repeat_coordinate(x, n, kind, rng);
      const DiffArray expect = add_scalar(repeat_noise_neg_logp(r.u, kind, DiffArray::scalar(0.0)),
                                          0.5 * double(n) * std::log(double(n)));
      contrib = std::max(contrib, max_abs_diff(r.contribution.values(), expect.values()));
      inverse = std::max(inverse, max_abs_diff(repeat_inverse(r.z).values(), x.values()));
    }
  }
  UnfoldSpec spec{2, 7, 6, 3, 2, 2, 1, 1, 1};
  auto plan = std::make_shared<UnfoldPlan>(spec);
  const DiffArray padded = standard_normal({3, spec.channels, spec.padded_h(), spec.padded_w()}, rng);
  const double fold = max_abs_diff(fold_mean(unfold_values(padded, plan), plan).values(), padded.values());
  return {at_most("repetition", "contribution = -log p(u) + N/2 log N", contrib, 1e-10),
          at_most("repetition", "mean of copies recovers x", inverse, 1e-12),
          at_most("repetition", "fold(unfold(x)) = x", fold, 1e-12)};
}

std::vector<CheckResult> suite_fft(const VerifyOptions& o) {
  Rng rng(mix_seed(o.seed, 5));
  const std::size_t in = 4, out = 3, l = 32, k = 5, batch = 24;
  std::vector<double> kernel(out * in * k), x(batch * in * l);
  for (auto& v : kernel) v = rng.normal();
  for (auto& v : x) v = rng.normal();
  const SpectralConv conv = SpectralConv::from_kernel(kernel, in, out, k, l);
  const DiffArray spectral = conv.forward(DiffArray({batch, in, l}, x));
  const auto direct = direct_conv1d(x, batch, in, l, kernel, out, k);
  double imag = 0.0;
  conv.time_kernel(&imag);

  const SpectralConv sq = SpectralConv::random_svd(in, l, k, rng);
  const DiffArray xs = standard_normal({batch, in, l}, rng);
  const double round_trip = max_abs_diff(sq.inverse(sq.forward(xs, true)).values(), xs.values());
  return {at_most("fft", "spectral vs direct conv1d, max abs diff", max_abs_diff(spectral.values(), direct), 1e-5),
          at_most("fft", "imaginary part of the time kernel", imag, 1e-10),
          at_most("fft", "per-frequency inverse round trip", round_trip, 1e-8)};
}

std::vector<CheckResult> suite_gradients(const VerifyOptions& o) {
  using nlohmann::json;
  // one model touching every parameterized layer kind
  const json layers = json::array({
      {{"type", "conv"}, {"out_channels", 3}, {"kernel", 2}, {"stride", 1}, {"pad", 1}},
      {{"type", "rq_spline"}, {"bins", 4}, {"bound", 3.0}},
      {{"type", "flatten"}},
      {{"type", "linear"}, {"out", 8}},
      {{"type", "leaky_relu"}, {"slope", 0.5}},
      {{"type", "residual"},
       {"branch_a", json::array({{{"type", "linear"}, {"out", 8}}})},
       {"branch_b", json::array({{{"type", "linear"}, {"out", 8}}})},
       {"hidden", 6}},
      {{"type", "linear"}, {"out", 10}},
      {{"type", "linear"}, {"out", 4}, {"inverse", "conditional"}},
      {{"type", "linear"}, {"out", 3}, {"inverse", "fixed"}, {"fixed_log_std", -0.5}},
  });
  FlowModel model = build_model(layers, {1, 3, 3}, o.seed);
  Rng rng(mix_seed(o.seed, 6));
  randomize_parameters(model.parameters(), rng, 0.1);
  const DiffArray x = standard_normal({5, 1, 3, 3}, rng);
  std::vector<CheckResult> out;
  for (const auto& g : check_gradients(model, x, mix_seed(o.seed, 7))) {
    out.push_back(at_most("gradients", g.parameter, g.max_rel_error, 1e-4,
                          std::to_string(g.entries) + " entries"));
  }
  return out;
}

}  // namespace

std::vector<std::string> verify_suite_names() {
  return {"theorem1", "theorem2", "rotations", "repetition", "fft", "gradients"};
}

std::vector<CheckResult> run_verify_suite(const std::string& suite, const VerifyOptions& options) {
  if (suite == "theorem1") return suite_theorem1(options);
  if (suite == "theorem2") return suite_theorem2(options);
  if (suite == "rotations") return suite_rotations(options);
  if (suite == "repetition") return suite_repetition(options);
  if (suite == "fft") return suite_fft(options);
  if (suite == "gradients") return suite_gradients(options);
  throw ConfigError("unknown verify suite \"" + suite + "\"");
}

void randomize_parameters(const std::vector<Parameter*>& params, Rng& rng, double std) {
  for (Parameter* p : params) {
    std::vector<double> v(p->value.size());
    for (double& e : v) e = std * rng.normal();
    p->value = DiffArray(p->value.shape(), std::move(v));
  }
}

double likelihood_mean(const FlowModel& model, const DiffArray& x, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  Context ctx(nullptr, rng);
  return model.log_likelihood_sample(x, ctx).mean_total();
}

std::vector<std::vector<double>> likelihood_gradient(const FlowModel& model, const DiffArray& x,
                                                     std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  Tape tape;
  Context ctx(&tape, rng);
  const DiffArray loss = mean(model.log_likelihood_sample(x, ctx).total);
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  for (Parameter* p : model.parameters()) grads.push_back(tape.grad(ctx.use(*p)));
  return grads;
}

std::vector<GradientCheck> check_gradients(FlowModel& model, const DiffArray& x,
                                           std::uint64_t noise_seed, double h, double floor) {
  const auto grads = likelihood_gradient(model, x, noise_seed);
  const auto params = model.parameters();
  std::vector<GradientCheck> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const DiffArray original = p.value;
    GradientCheck c{p.name, 0.0, original.size()};
    for (std::size_t i = 0; i < original.size(); ++i) {
      auto shifted = [&](double delta) {
        std::vector<double> v = original.to_vector();
        v[i] += delta;
        p.value = DiffArray(original.shape(), std::move(v));
        return likelihood_mean(model, x, noise_seed);
      };
      const double fd =
          (8.0 * (shifted(h) - shifted(-h)) - (shifted(2.0 * h) - shifted(-2.0 * h))) / (12.0 * h);
      const double g = grads[k][i];
      const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
      c.max_rel_error = std::max(c.max_rel_error, err);
    }
    p.value = original;
    out.push_back(c);
  }
  return out;
}

}  // namespace flowify
