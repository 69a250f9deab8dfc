#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flowify/conv_flow.hpp"
#include "flowify/errors.hpp"
#include "flowify/verify.hpp"
#include "support.hpp"

using namespace flowify;

namespace {

ConvOptions square(std::size_t k, std::size_t s, std::size_t p = 0) {
  ConvOptions o;
  o.kernel_h = o.kernel_w = k;
  o.stride_h = o.stride_w = s;
  o.pad_h = o.pad_w = p;
  return o;
}

/// Dense W of the kernel linear map from the generators, [m, n].
support::Matrix dense_kernel(const SvdLinear& l) {
  const std::size_t n = l.in_dim(), m = l.out_dim();
  const auto u = support::expm(support::skew_from_upper(l.u_rot().generator().value.to_vector(), n), n);
  const auto v = support::expm(support::skew_from_upper(l.v_rot().generator().value.to_vector(), m), m);
  support::Matrix su(m * n, 0.0);
  for (std::size_t i = 0; i < std::min(m, n); ++i)
    for (std::size_t j = 0; j < n; ++j) su[i * n + j] = std::exp(l.log_sigma().value[i]) * u[i * n + j];
  return support::matmul(v, su, m, m, n);
}

/// Plain cross-correlation with zero padding.
std::vector<double> direct_conv2d(const DiffArray& x, const support::Matrix& w,
                                  const std::vector<double>& bias, std::size_t co, std::size_t k,
                                  std::size_t s, std::size_t p) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  std::vector<double> y(b * co * oh * ow);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long yy = static_cast<long>(oy * s + i) - static_cast<long>(p);
                const long xx = static_cast<long>(ox * s + j) - static_cast<long>(p);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += w[o * c * k * k + ch * k * k + i * k + j] * x[((n * c + ch) * h + yy) * wd + xx];
              }
          y[((n * co + o) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("output shape and uncovered geometry") {
  Rng rng(0);
  ConvFlow a("c", {1, 6, 6}, 3, rng, square(3, 1, 1));
  CHECK(a.output_shape() == Shape{3, 6, 6});
  CHECK(a.stochastic_forward());
  CHECK(a.pad_log_scale() != nullptr);
  CHECK(a.unfold_log_scale() != nullptr);
  CHECK_THROWS_AS(ConvFlow("c", {1, 5, 5}, 2, rng, square(2, 2)), SpecError);
  CHECK_THROWS_AS(ConvFlow("c", {5, 5}, 2, rng, square(1, 1)), DimensionError);
}

TEST_CASE("non-overlapping unpadded conv is a deterministic exact bijection") {
  Rng rng(1);
  ConvFlow layer("c", {2, 4, 6}, 8, rng, square(2, 2));
  randomize_parameters(layer.parameters(), rng, 0.5);
  CHECK_FALSE(layer.stochastic_forward());
  CHECK(layer.parameters().size() == 4);

  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({3, 2, 4, 6}, rng);
  const LayerOutput out = layer.forward(x, ctx);
  const auto w = dense_kernel(layer.kernel_linear());
  const auto want = direct_conv2d(x, w, layer.kernel_linear().bias().value.to_vector(), 8, 2, 2, 0);
  REQUIRE(out.z.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(out.z[i] - want[i]) < 1e-12);

  const double logdet = support::log_abs_det(w, 8) * 6.0;  // six patches
  for (std::size_t b = 0; b < 3; ++b) CHECK(out.contribution[b] == doctest::Approx(logdet).epsilon(1e-12));

  const DiffArray back = layer.inverse(out.z, ctx, InverseMode::mean);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
}

TEST_CASE("reference kernel is the dense mean map") {
  Rng rng(2);
  ConvFlow layer("c", {3, 5, 5}, 4, rng, square(3, 1, 1));
  randomize_parameters(layer.parameters(), rng, 0.4);
  const ReferenceKernel k = assemble_reference_kernel(layer, rng);
  const auto w = dense_kernel(layer.kernel_linear());
  REQUIRE(k.weight.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(k.weight[i] - w[i]) < 1e-12);
  CHECK(k.in_channels == 3);
  CHECK(k.kernel_h == 3);
}

TEST_CASE("stage contributions add up to the layer contribution") {
  Rng rng(3);
  ConvFlow layer("c", {1, 5, 5}, 3, rng, square(3, 2, 1));
  randomize_parameters(layer.parameters(), rng, 0.3);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({2, 1, 5, 5}, rng);
  const auto st = layer.forward_stages(x, ctx);
  const std::size_t p = layer.spec().patch_count();
  for (std::size_t b = 0; b < 2; ++b) {
    double lin = 0.0;
    for (std::size_t q = 0; q < p; ++q) lin += st.linear.contribution[b * p + q];
    CHECK(st.out.contribution[b] ==
          doctest::Approx(st.pad.contribution[b] + st.unfold.contribution[b] + lin).epsilon(1e-13));
  }
}

TEST_CASE("dimension-increasing overlapping conv has an exact left inverse") {
  Rng rng(4);
  const DiffArray x = standard_normal({3, 1, 4, 4}, rng);
  for (NoiseKind kind : {NoiseKind::normal, NoiseKind::uniform_ball}) {
    ConvOptions o = square(2, 1, 1);
    o.noise = kind;
    ConvFlow layer("c", {1, 4, 4}, 6, rng, o);
    randomize_parameters(layer.parameters(), rng, 0.4);
    Context ctx(nullptr, rng);
    const DiffArray z = layer.forward(x, ctx).z;
    const DiffArray back = layer.inverse(z, ctx, InverseMode::mean);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-11);
  }
}

TEST_CASE("decreasing conv inverse lands on a consistent preimage") {
  Rng rng(5);
  ConvFlow layer("c", {2, 4, 4}, 3, rng, square(2, 2));
  randomize_parameters(layer.parameters(), rng, 0.4);
  Context ctx(nullptr, rng);
  const DiffArray z = standard_normal({2, 3, 2, 2}, rng);
  const DiffArray x = layer.inverse(z, ctx, InverseMode::stochastic);
  const DiffArray again = layer.forward(x, ctx).z;
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(again[i] - z[i]) < 1e-11);
}

TEST_CASE("conv noise scales start at the configured init value") {
  Rng rng(6);
  ConvOptions o = square(3, 1, 1);
  o.init_log_scale = -3.0;
  ConvFlow layer("c", {1, 4, 4}, 2, rng, o);
  CHECK(layer.pad_log_scale()->value.item() == -3.0);
  CHECK(layer.unfold_log_scale()->value.item() == -3.0);
  CHECK(layer.describe()["init_log_scale"] == -3.0);
  CHECK(layer.describe()["kernel"] == nlohmann::json::array({3, 3}));
}
