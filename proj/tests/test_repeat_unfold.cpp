#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flowify/errors.hpp"
#include "flowify/repeat_unfold.hpp"
#include "support.hpp"

using namespace flowify;

namespace {

UnfoldPlanPtr make_plan(std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s) {
  UnfoldSpec spec;
  spec.channels = c;
  spec.height = h;
  spec.width = w;
  spec.kernel_h = spec.kernel_w = k;
  spec.stride_h = spec.stride_w = s;
  return std::make_shared<const UnfoldPlan>(spec);
}

}  // namespace

TEST_CASE("Helmert basis is orthonormal and orthogonal to the diagonal") {
  for (std::size_t n = 2; n <= 9; ++n) {
    const DiffArray h = diagonal_complement_basis(n);
    REQUIRE(h.shape() == Shape{n - 1, n});
    for (std::size_t a = 0; a + 1 < n; ++a) {
      double row_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) row_sum += h[a * n + i];
      CHECK(std::abs(row_sum) < 1e-14);
      for (std::size_t b = 0; b + 1 < n; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += h[a * n + i] * h[b * n + i];
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-14);
      }
    }
  }
  CHECK_THROWS_AS(diagonal_complement_basis(0), SpecError);
}

TEST_CASE("unit ball volume matches the closed form") {
  for (std::size_t k = 1; k <= 8; ++k) {
    CHECK(log_unit_ball_volume(k) == doctest::Approx(std::log(support::unit_ball_volume(k))).epsilon(1e-13));
  }
  CHECK(log_unit_ball_volume(2) == doctest::Approx(std::log(M_PI)));
}

TEST_CASE("repetition keeps the mean and pays (N/2) log N") {
  Rng rng(1);
  const DiffArray x = DiffArray::from({0.3, -1.2, 2.0});
  for (NoiseKind kind : {NoiseKind::normal, NoiseKind::uniform_ball}) {
    for (std::size_t n = 1; n <= 6; ++n) {
      const RepeatOutput r = repeat_coordinate(x, n, kind, rng);
      CHECK(r.z.shape() == Shape{3, n});
      const DiffArray back = repeat_inverse(r.z);
      for (std::size_t b = 0; b < 3; ++b) CHECK(std::abs(back[b] - x[b]) < 1e-14);
      if (n == 1) continue;
      const DiffArray neg_logp = repeat_noise_neg_logp(r.u, kind, DiffArray::scalar(0.0));
      for (std::size_t b = 0; b < 3; ++b) {
        CHECK(r.contribution[b] ==
              doctest::Approx(neg_logp[b] + 0.5 * n * std::log(static_cast<double>(n))).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("uniform-ball noise stays in the ball and out-of-ball draws are impossible") {
  Rng rng(2);
  const RepeatOutput r = repeat_coordinate(DiffArray::from({0.0, 0.0}), 5, NoiseKind::uniform_ball, rng);
  for (std::size_t b = 0; b < 2; ++b) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < 4; ++j) n2 += r.u[b * 4 + j] * r.u[b * 4 + j];
    CHECK(n2 <= 1.0);
  }
  const DiffArray outside = DiffArray(Shape{1, 2}, {1.0, 1.0});
  CHECK(std::isinf(repeat_noise_neg_logp(outside, NoiseKind::uniform_ball, DiffArray::scalar(0.0))[0]));
}

TEST_CASE("repetition rejects malformed input") {
  Rng rng(0);
  CHECK_THROWS_AS(repeat_coordinate(DiffArray::from({1.0}), 0, NoiseKind::normal, rng), SpecError);
  CHECK_THROWS_AS(repeat_coordinate_with(DiffArray::from({1.0}), 3, NoiseKind::normal,
                                         DiffArray::zeros({1, 1})),
                  DimensionError);
  CHECK_THROWS_AS(repeat_inverse(DiffArray::from({1.0})), DimensionError);
}

TEST_CASE("unfold plan geometry and multiplicities") {
  const auto plan = make_plan(1, 4, 4, 2, 1);
  const UnfoldSpec& s = plan->spec();
  CHECK(s.out_h() == 3);
  CHECK(s.patch_count() == 9);
  CHECK(s.patch_size() == 4);
  // Corners are covered once, edges twice, interior four times.
  const auto& m = plan->multiplicity();
  CHECK(m[0] == 1);
  CHECK(m[1] == 2);
  CHECK(m[5] == 4);
  CHECK(plan->covers_interior());

  CHECK_FALSE(make_plan(1, 5, 5, 2, 2)->covers_interior());
  UnfoldSpec bad;
  bad.height = 2;
  bad.width = 2;
  bad.kernel_h = bad.kernel_w = 3;
  CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("unfold_values matches direct patch loops") {
  const std::size_t c = 2, h = 5, w = 4, k = 3, st = 1;
  const auto plan = make_plan(c, h, w, k, st);
  Rng rng(3);
  const DiffArray img = standard_normal({2, c, h, w}, rng);
  const DiffArray p = unfold_values(img, plan);
  const std::size_t oh = plan->spec().out_h(), ow = plan->spec().out_w();
  REQUIRE(p.shape() == Shape{2 * oh * ow, c * k * k});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const double want = img[((b * c + ch) * h + oy * st + i) * w + ox * st + j];
              const std::size_t row = b * oh * ow + oy * ow + ox;
              CHECK(p[row * c * k * k + ch * k * k + i * k + j] == want);
            }
}

TEST_CASE("fold_sum is the adjoint of unfold_values") {
  const auto plan = make_plan(2, 6, 5, 3, 2);
  Rng rng(4);
  const DiffArray x = standard_normal({3, 2, 6, 5}, rng);
  const DiffArray y = standard_normal(unfold_values(x, plan).shape(), rng);
  const double lhs = sum(unfold_values(x, plan) * y).item();
  const double rhs = sum(x * fold_sum(y, plan)).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("fold_mean undoes the noisy unfold exactly") {
  Rng rng(5);
  for (NoiseKind kind : {NoiseKind::normal, NoiseKind::uniform_ball}) {
    const auto plan = make_plan(3, 7, 6, 3, 1);
    const DiffArray x = standard_normal({2, 3, 7, 6}, rng);
    const UnfoldOutput out = unfold(x, plan, kind, rng, DiffArray::scalar(0.5));
    const DiffArray back = fold_mean(out.patches, plan);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back[i] - x[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("unfold without overlap is deterministic with zero contribution") {
  const auto plan = make_plan(1, 4, 4, 2, 2);
  Rng rng(6);
  const DiffArray x = standard_normal({2, 1, 4, 4}, rng);
  const UnfoldOutput out = unfold(x, plan, NoiseKind::normal, rng);
  CHECK(out.contribution.to_vector() == std::vector<double>{0.0, 0.0});
  CHECK(out.patches.to_vector() == unfold_values(x, plan).to_vector());
}

TEST_CASE("unfold contribution reconstructs from the per-pixel noise") {
  // Every pixel's copies sum to N x, so the orthogonal part of each copy vector is the noise.
  const auto plan = make_plan(1, 3, 3, 2, 1);
  Rng rng(7);
  const DiffArray x = standard_normal({1, 1, 3, 3}, rng);
  const double ls = -0.3;
  const UnfoldOutput out = unfold(x, plan, NoiseKind::normal, rng, DiffArray::scalar(ls));
  const auto& src = plan->source();
  const auto& mult = plan->multiplicity();
  std::vector<double> n2(9, 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double d = out.patches[i] - x[src[i]];
    n2[src[i]] += d * d;
  }
  double want = 0.0;
  for (std::size_t p = 0; p < 9; ++p) {
    const double n = static_cast<double>(mult[p]);
    if (mult[p] < 2) continue;
    // noise = sqrt(N) e^ls R u with |R u| = |u|, so |u|^2 = |copies - x|^2 / (N e^{2 ls})
    const double u2 = n2[p] / (n * std::exp(2 * ls));
    want += 0.5 * u2 + 0.5 * (n - 1) * std::log(2 * M_PI) + (n - 1) * ls + 0.5 * n * std::log(n);
  }
  CHECK(out.contribution[0] == doctest::Approx(want).epsilon(1e-11));
}

TEST_CASE("noise padding and crop") {
  Rng rng(8);
  const DiffArray x = standard_normal({2, 1, 3, 3}, rng);
  const double ls = 0.2;
  const PadOutput p = pad_flow(x, 1, 2, rng, DiffArray::scalar(ls));
  CHECK(p.padded.shape() == Shape{2, 1, 5, 7});
  CHECK(crop(p.padded, 1, 2).to_vector() == x.to_vector());
  for (std::size_t b = 0; b < 2; ++b) {
    double want = 0.0;
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t xx = 0; xx < 7; ++xx) {
        if (y >= 1 && y < 4 && xx >= 2 && xx < 5) continue;
        const double v = p.padded[b * 35 + y * 7 + xx] / std::exp(ls);
        want += 0.5 * v * v + ls + 0.5 * std::log(2 * M_PI);
      }
    CHECK(p.contribution[b] == doctest::Approx(want).epsilon(1e-12));
  }
  const PadOutput none = pad_flow(x, 0, 0, rng);
  CHECK(none.padded.to_vector() == x.to_vector());
  CHECK_THROWS_AS(pad_flow(DiffArray::zeros({3, 3}), 1, 1, rng), DimensionError);
}

TEST_CASE("noise kind names round trip") {
  CHECK(parse_noise_kind(noise_kind_name(NoiseKind::normal)) == NoiseKind::normal);
  CHECK(parse_noise_kind(noise_kind_name(NoiseKind::uniform_ball)) == NoiseKind::uniform_ball);
  CHECK_THROWS_AS(parse_noise_kind("laplace"), ConfigError);
}
