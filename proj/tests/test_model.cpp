#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flowify/activations.hpp"
#include "flowify/config.hpp"
#include "flowify/errors.hpp"
#include "flowify/linear_flow.hpp"
#include "flowify/residual.hpp"
#include "flowify/verify.hpp"
#include "support.hpp"

using namespace flowify;
using nlohmann::json;

namespace {

Dataset pixel_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.sample_shape = {1, h, w};
  d.count = n;
  d.integer_pixels = true;
  for (std::size_t i = 0; i < n * h * w; ++i) d.values.push_back(std::floor(256.0 * rng.uniform()));
  return d;
}

}  // namespace

TEST_CASE("an empty model is the standard normal") {
  const FlowModel m({2}, {});
  Rng rng(0);
  Context ctx(nullptr, rng);
  const auto ledger = m.log_likelihood_sample(DiffArray::zeros({1, 2}), ctx);
  CHECK(ledger.mean_total() == doctest::Approx(-1.8378770664093453).epsilon(1e-15));
  CHECK(m.deterministic());
  CHECK(m.output_shape() == Shape{2});
}

TEST_CASE("a lone probit layer scores dequantized pixels at 8 bits per dimension") {
  FlowModel m = build_model(json::array({{{"type", "probit"}}}), {1, 3, 3}, 0);
  const Dataset d = pixel_images(40, 3, 3, 1);
  const EvalResult r = evaluate(m, d, 7);
  REQUIRE(r.bpd.has_value());
  CHECK(std::abs(*r.bpd - 8.0) < 1e-9);
  CHECK(r.count == 40);
  CHECK(nll_to_bpd(0.0, 10) == 8.0);
  CHECK(nll_to_bpd(std::log(2.0) * 10, 10) == doctest::Approx(9.0));
}

TEST_CASE("layer shapes must chain") {
  Rng rng(0);
  std::vector<FlowLayerPtr> layers;
  layers.push_back(std::make_unique<LinearFlowLayer>("a", 3, 2, rng));
  layers.push_back(std::make_unique<LinearFlowLayer>("b", 3, 3, rng));
  CHECK_THROWS_AS(FlowModel({3}, std::move(layers)), ConfigError);
}

TEST_CASE("ledger totals are the sum of the per-layer terms and the base") {
  FlowModel m = build_model(json::array({{{"type", "linear"}, {"out", 3}},
                                         {{"type", "rq_spline"}},
                                         {{"type", "linear"}, {"out", 2}}}),
                            {3}, 4);
  Rng rng(1);
  randomize_parameters(m.parameters(), rng, 0.3);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({5, 3}, rng);
  const auto ledger = m.log_likelihood_sample(x, ctx);
  REQUIRE(ledger.layers.size() == 3);
  for (std::size_t b = 0; b < 5; ++b) {
    double s = ledger.base[b];
    for (const auto& l : ledger.layers) s += l[b];
    CHECK(ledger.total[b] == doctest::Approx(s).epsilon(1e-14));
  }
  CHECK(ledger.layer_means().size() == 4);
}

TEST_CASE("deterministic bijective model matches dense change of variables") {
  FlowModel m = build_model(json::array({{{"type", "linear"}, {"out", 3}},
                                         {{"type", "rq_spline"}, {"bins", 4}},
                                         {{"type", "linear"}, {"out", 3}}}),
                            {3}, 5);
  Rng rng(2);
  randomize_parameters(m.parameters(), rng, 0.4);
  REQUIRE(m.deterministic());
  auto f = [&](const std::vector<double>& v) {
    DiffArray h(Shape{1, 3}, v);
    Context c(nullptr, rng);
    for (const auto& l : m.layers()) h = l->forward(h, c).z;
    return h.to_vector();
  };
  const std::vector<double> x{0.3, -0.7, 1.1};
  const auto jac = support::jacobian(f, x, 3, 1e-6);
  const double want = support::std_normal_logpdf(f(x)) + support::log_abs_det(jac, 3);
  Context ctx(nullptr, rng);
  const double got = m.log_likelihood_sample(DiffArray(Shape{1, 3}, x), ctx).mean_total();
  CHECK(got == doctest::Approx(want).epsilon(1e-7));
}

TEST_CASE("non-finite values are reported with their origin") {
  FlowModel probit = build_model(json::array({{{"type", "probit"}}}), {2}, 0);
  Rng rng(0);
  Context ctx(nullptr, rng);
  CHECK_THROWS_AS(probit.log_likelihood_sample(DiffArray(Shape{1, 2}, {0.5, 1.5}), ctx), DataError);

  FlowModel m = build_model(json::array({{{"type", "linear"}, {"out", 2}}, {{"type", "leaky_relu"}}}), {2}, 0);
  auto& lin = dynamic_cast<LinearFlowLayer&>(m.layer(0)).linear();
  lin.log_sigma().value = DiffArray::from({800.0, 800.0});
  try {
    m.log_likelihood_sample(DiffArray(Shape{1, 2}, {0.5, 0.25}), ctx);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.layer_index() == -1);
  }
}

TEST_CASE("evaluation does not depend on the thread count") {
  FlowModel m = build_model(json::array({{{"type", "linear"}, {"out", 4}}, {{"type", "linear"}, {"out", 2}}}),
                            {2}, 3);
  Rng rng(3);
  randomize_parameters(m.parameters(), rng, 0.3);
  Dataset d;
  d.sample_shape = {2};
  d.count = 600;
  for (std::size_t i = 0; i < 1200; ++i) d.values.push_back(rng.normal());
  const EvalResult one = evaluate(m, d, 11, 100, 1);
  const EvalResult four = evaluate(m, d, 11, 100, 4);
  CHECK(one.nll == four.nll);
  CHECK_FALSE(one.bpd.has_value());
  CHECK(evaluate(m, d, 12, 100, 1).nll != one.nll);
}

TEST_CASE("sampling produces input-shaped draws and inverts the model") {
  FlowModel m = build_model(json::array({{{"type", "conv"}, {"out_channels", 4}, {"kernel", 2}},
                                         {{"type", "flatten"}},
                                         {{"type", "linear"}, {"out", 3}}}),
                            {1, 4, 4}, 6);
  Rng rng(4);
  Context ctx(nullptr, rng);
  const DiffArray s = m.sample(5, ctx, InverseMode::stochastic);
  CHECK(s.shape() == Shape{5, 1, 4, 4});
  const DiffArray mean_sample = m.sample(2, ctx, InverseMode::mean);
  CHECK(mean_sample.shape() == Shape{2, 1, 4, 4});
  CHECK(m.describe()["input_shape"] == json::array({1, 4, 4}));
}

TEST_CASE("residual block: parts add up and the inverse recovers the shape") {
  FlowModel m = build_model(
      json::array({{{"type", "residual"},
                    {"branch_a", json::array({{{"type", "linear"}, {"out", 3}}})},
                    {"branch_b", json::array({{{"type", "linear"}, {"out", 3}}})}}}),
      {3}, 7);
  auto& block = dynamic_cast<ResidualFlowBlock&>(m.layer(0));
  CHECK(block.stochastic_forward());
  Rng rng(5);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({4, 3}, rng);
  const auto parts = block.forward_parts(x, ctx);
  for (std::size_t b = 0; b < 4; ++b) {
    CHECK(parts.total[b] == doctest::Approx(parts.duplication[b] + parts.branch_a[b] +
                                            parts.branch_b[b] + parts.sum[b])
                                .epsilon(1e-13));
  }
  CHECK(block.inverse(parts.y, ctx, InverseMode::mean).shape() == Shape{4, 3});
  CHECK(block.describe()["type"] == "residual");
}

TEST_CASE("auxiliary loss defaults to zero") {
  const FlowModel m({2}, {});
  Rng rng(0);
  Context ctx(nullptr, rng);
  CHECK(m.auxiliary_loss(ctx).item() == 0.0);
}
