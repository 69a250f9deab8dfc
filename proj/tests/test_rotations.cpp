#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flowify/errors.hpp"
#include "flowify/rotations.hpp"
#include "support.hpp"

using namespace flowify;

TEST_CASE("zero generator gives the identity") {
  RotationParam r("r", 4);
  Rng rng(0);
  Context ctx(nullptr, rng);
  const DiffArray m = r.materialize(ctx);
  for (std::size_t i = 0; i < 16; ++i) CHECK(m[i] == (i % 5 == 0 ? 1.0 : 0.0));
  CHECK(RotationParam::free_count(4) == 6);
}

TEST_CASE("skew layout uses the row-major strict upper triangle") {
  RotationParam r("r", 3);
  r.set_generator({1.0, 2.0, 3.0});
  Rng rng(0);
  Context ctx(nullptr, rng);
  const DiffArray s = r.skew(ctx);
  CHECK(s.to_vector() == std::vector<double>{0, 1, 2, -1, 0, 3, -2, -3, 0});
  CHECK_THROWS_AS(r.set_generator({1.0}), DimensionError);
}

TEST_CASE("materialized rotation matches the reference exponential") {
  Rng rng(3);
  for (std::size_t d : {2u, 3u, 7u, 16u}) {
    RotationParam r("r", d, 1.0, rng);
    Context ctx(nullptr, rng);
    const DiffArray m = r.materialize(ctx);
    const auto ref = support::expm(support::skew_from_upper(r.generator().value.to_vector(), d), d);
    for (std::size_t i = 0; i < d * d; ++i) CHECK(std::abs(m[i] - ref[i]) < 1e-11);
  }
}

TEST_CASE("2-d rotation is the planar rotation by the generator angle") {
  RotationParam r("r", 2);
  r.set_generator({0.4});
  Rng rng(0);
  Context ctx(nullptr, rng);
  const DiffArray m = r.materialize(ctx);
  CHECK(m[0] == doctest::Approx(std::cos(0.4)).epsilon(1e-14));
  CHECK(m[1] == doctest::Approx(std::sin(0.4)).epsilon(1e-14));
  CHECK(m[2] == doctest::Approx(-std::sin(0.4)).epsilon(1e-14));
}

TEST_CASE("apply and apply_inverse undo each other and keep norms") {
  Rng rng(5);
  RotationParam r("r", 6, 0.8, rng);
  Context ctx(nullptr, rng);
  const DiffArray x = standard_normal({4, 6}, rng);
  const DiffArray y = r.apply(x, ctx);
  const DiffArray back = r.apply_inverse(y, ctx);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-13);
  const DiffArray nx = sum_rows(square(x)), ny = sum_rows(square(y));
  for (std::size_t b = 0; b < 4; ++b) CHECK(nx[b] == doctest::Approx(ny[b]).epsilon(1e-12));
  CHECK_THROWS_AS(r.apply(standard_normal({2, 5}, rng), ctx), DimensionError);
}

TEST_CASE("one-dimensional rotation is trivial") {
  RotationParam r("r", 1);
  CHECK(r.generator().value.size() == 0);
  Rng rng(0);
  Context ctx(nullptr, rng);
  const DiffArray x = DiffArray(Shape{2, 1}, {3.0, -1.0});
  CHECK(r.apply(x, ctx).to_vector() == x.to_vector());
}

TEST_CASE("gradient through the generator matches finite differences") {
  Rng rng(9);
  RotationParam r("r", 4, 0.5, rng);
  const DiffArray x = standard_normal({3, 4}, rng);
  const DiffArray w = standard_normal({3, 4}, rng);
  auto loss = [&](const std::vector<double>& g) {
    RotationParam q("q", 4);
    q.set_generator(g);
    Context c(nullptr, rng);
    return sum(q.apply(x, c) * w).item();
  };
  Tape tape;
  Context ctx(&tape, rng);
  tape.backward(sum(r.apply(x, ctx) * w));
  const auto grad = tape.grad(ctx.use(r.generator()));
  const auto g0 = r.generator().value.to_vector();
  for (std::size_t i = 0; i < g0.size(); ++i) {
    auto gp = g0, gm = g0;
    gp[i] += 1e-6;
    gm[i] -= 1e-6;
    CHECK(grad[i] == doctest::Approx((loss(gp) - loss(gm)) / 2e-6).epsilon(1e-6));
  }
}
