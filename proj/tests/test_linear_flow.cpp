#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flowify/errors.hpp"
#include "flowify/linear_flow.hpp"
#include "flowify/verify.hpp"
#include "support.hpp"

using namespace flowify;

namespace {

struct Dense {
  support::Matrix w;  // [m, n]
  std::vector<double> b, sigma;
  support::Matrix u, v;
};

/// W = V Sigma_{m x n} U rebuilt from the raw parameters with the test's own exponential.
Dense dense_of(const SvdLinear& l) {
  const std::size_t n = l.in_dim(), m = l.out_dim();
  Dense d;
  d.u = n > 1 ? support::expm(support::skew_from_upper(l.u_rot().generator().value.to_vector(), n), n)
              : support::identity(n);
  d.v = m > 1 ? support::expm(support::skew_from_upper(l.v_rot().generator().value.to_vector(), m), m)
              : support::identity(m);
  d.b = l.bias().value.to_vector();
  for (double s : l.log_sigma().value.values()) d.sigma.push_back(std::exp(s));
  support::Matrix su(m * n, 0.0);
  for (std::size_t i = 0; i < std::min(m, n); ++i)
    for (std::size_t j = 0; j < n; ++j) su[i * n + j] = d.sigma[i] * d.u[i * n + j];
  d.w = support::matmul(d.v, su, m, m, n);
  return d;
}

SvdLinear random_layer(std::size_t n, std::size_t m, std::uint64_t seed,
                       SvdLinearOptions opt = {}) {
  Rng rng(seed);
  SvdLinear l("l", n, m, rng, opt);
  randomize_parameters(l.parameters(), rng, 0.5);
  return l;
}

double max_abs(const DiffArray& a, const DiffArray& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("regime follows the dimension comparison") {
  CHECK(regime_for(5, 3) == Regime::decreasing);
  CHECK(regime_for(3, 3) == Regime::preserving);
  CHECK(regime_for(2, 3) == Regime::increasing);
  CHECK(regime_name(Regime::increasing) == "dimension-increasing");
  CHECK(parse_inverse_kind("fixed") == InverseDensity::Kind::fixed);
  CHECK_THROWS_AS(parse_inverse_kind("other"), ConfigError);
  Rng rng(0);
  CHECK_THROWS_AS(SvdLinear("l", 0, 2, rng), ConfigError);
}

TEST_CASE("calling a regime-specific operation on the wrong layer throws") {
  SvdLinear l = random_layer(4, 2, 1);
  Rng rng(0);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({2, 4}, rng);
  CHECK_THROWS_AS(l.forward_preserving(x, ctx), RegimeError);
  CHECK_THROWS_AS(l.forward_increasing(x, ctx), RegimeError);
  CHECK_THROWS_AS(l.inverse_increasing(x, ctx), RegimeError);
}

TEST_CASE("mean_weight equals the dense reference product") {
  for (auto [n, m] : {std::pair{3u, 3u}, {5u, 2u}, {2u, 5u}, {1u, 4u}, {4u, 1u}}) {
    const SvdLinear l = random_layer(n, m, 10 + n * 7 + m);
    const Dense d = dense_of(l);
    Rng rng(0);
    Context ctx(nullptr, rng);
    const DiffArray w = l.mean_weight(ctx);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(std::abs(w[i] - d.w[i]) < 1e-12);
  }
}

TEST_CASE("preserving layer is affine with log|det W| as its contribution") {
  const SvdLinear l = random_layer(4, 4, 2);
  const Dense d = dense_of(l);
  Rng rng(1);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({3, 4}, rng);
  const LayerOutput out = l.forward(x, ctx);
  const double logdet = support::log_abs_det(d.w, 4);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      double z = d.b[i];
      for (std::size_t j = 0; j < 4; ++j) z += d.w[i * 4 + j] * x[b * 4 + j];
      CHECK(std::abs(out.z[b * 4 + i] - z) < 1e-12);
    }
    CHECK(out.contribution[b] == doctest::Approx(logdet).epsilon(1e-12));
  }
  CHECK(max_abs(l.inverse(out.z, ctx, InverseMode::mean), x) < 1e-12);
}

TEST_CASE("decreasing layer is the mean map and scores the dropped coordinates") {
  SvdLinearOptions opt;
  opt.inverse = InverseDensity::Kind::fixed;
  opt.fixed_log_std = -0.4;
  const SvdLinear l = random_layer(5, 2, 3, opt);
  const Dense d = dense_of(l);
  Rng rng(2);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({4, 5}, rng);
  const LayerOutput out = l.forward(x, ctx);
  double logsig = 0.0;
  for (double s : d.sigma) logsig += std::log(s);
  for (std::size_t b = 0; b < 4; ++b) {
    std::vector<double> h(5, 0.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) h[i] += d.u[i * 5 + j] * x[b * 5 + j];
    double lq = 0.0;
    for (std::size_t i = 2; i < 5; ++i) {
      const double u = h[i] / std::exp(-0.4);
      lq += -0.5 * u * u + 0.4 - 0.5 * std::log(2.0 * M_PI);
    }
    CHECK(out.contribution[b] == doctest::Approx(lq + logsig).epsilon(1e-12));
    for (std::size_t i = 0; i < 2; ++i) {
      double z = d.b[i];
      for (std::size_t j = 0; j < 5; ++j) z += d.w[i * 5 + j] * x[b * 5 + j];
      CHECK(std::abs(out.z[b * 2 + i] - z) < 1e-12);
    }
  }
  for (InverseMode mode : {InverseMode::mean, InverseMode::stochastic}) {
    const DiffArray xr = l.inverse(out.z, ctx, mode);
    CHECK(max_abs(l.forward(xr, ctx).z, out.z) < 1e-12);
  }
}

TEST_CASE("conditional inverse density starts as a standard normal") {
  Rng rng(4);
  InverseDensity q(InverseDensity::Kind::conditional, "q", 2, 3, rng);
  CHECK(q.parameters().size() == 6);
  Context ctx(nullptr, rng);
  const DiffArray cond = standard_normal({2, 2}, rng);
  const auto [mu, ls] = q.params(cond, ctx);
  CHECK(mu.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < mu.size(); ++i) {
    CHECK(mu[i] == 0.0);
    CHECK(ls[i] == 0.0);
  }
}

TEST_CASE("inverse density log-std is clamped") {
  Rng rng(0);
  InverseDensity q(InverseDensity::Kind::fixed, "q", 1, 2, rng, 50.0);
  Context ctx(nullptr, rng);
  const auto [mu, ls] = q.params(DiffArray::zeros({1, 1}), ctx);
  CHECK(ls[0] == kLogStdLimit);
}

TEST_CASE("increasing layer: pseudoinverse recovers the input and noise is scored") {
  SvdLinear l = random_layer(2, 5, 5);
  const Dense d = dense_of(l);
  Rng rng(6);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({3, 2}, rng);
  const LayerOutput out = l.forward(x, ctx);
  CHECK(max_abs(l.inverse(out.z, ctx, InverseMode::mean), x) < 1e-12);

  const double ls = l.aug_log_scale()->value.item();
  double logsig = 0.0;
  for (double s : d.sigma) logsig += std::log(s);
  for (std::size_t b = 0; b < 3; ++b) {
    // Recover the appended noise: V^T (z - b) / sigma, last three coordinates.
    double neg_logq = 0.0;
    for (std::size_t i = 2; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += d.v[k * 5 + i] * (out.z[b * 5 + k] - d.b[k]);
      const double e = s / d.sigma[i] / std::exp(ls);
      neg_logq -= -0.5 * e * e - ls - 0.5 * std::log(2.0 * M_PI);
    }
    CHECK(out.contribution[b] == doctest::Approx(neg_logq + logsig).epsilon(1e-10));
  }
}

TEST_CASE("parameter names and counts per regime") {
  Rng rng(0);
  SvdLinear dec("lin", 4, 2, rng), pre("lin", 3, 3, rng), inc("lin", 2, 4, rng);
  CHECK(pre.parameters().size() == 4);
  CHECK(inc.parameters().size() == 5);
  CHECK(inc.aug_log_scale() != nullptr);
  CHECK(dec.inverse_model() != nullptr);
  CHECK(dec.parameters().size() == 4 + 6);
  CHECK(pre.parameters()[0]->name == "lin.u_gen");
  CHECK(pre.log_sigma().value.shape() == Shape{3});
}

TEST_CASE("LinearFlowLayer checks its input shape") {
  Rng rng(0);
  LinearFlowLayer layer("l", 3, 2, rng);
  Context ctx(nullptr, rng);
  CHECK_THROWS_AS(layer.forward(DiffArray::zeros({2, 4}), ctx), DimensionError);
  CHECK(layer.describe()["out"] == 2);
  CHECK(layer.describe()["inverse"] == "conditional");
}
