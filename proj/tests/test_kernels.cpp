#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "flowify/kernels.hpp"

using namespace flowify::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& g) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(g);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(isa_supported(Isa::scalar));
  CHECK(table(Isa::scalar).isa == Isa::scalar);
  CHECK(isa_name(Isa::avx2) == "avx2");
}

TEST_CASE("scalar gemm matches a naive triple loop for every transpose combination") {
  std::mt19937_64 g(1);
  const std::size_t m = 5, n = 7, k = 3;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const auto a = random_vec(m * k, g), b = random_vec(k * n, g);
      MatRef ra{a.data(), ta ? m : k, ta}, rb{b.data(), tb ? k : n, tb};
      std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
      scalar::gemm(m, n, k, ra, rb, c.data(), n, false);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += ra.at(i, p) * rb.at(p, j);
      CHECK(max_abs_diff(c, ref) < 1e-13);
    }
  }
}

TEST_CASE("gemm accumulate adds onto the existing output") {
  const std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1};
  std::vector<double> c{10, 10, 10, 10};
  scalar::gemm(2, 2, 2, {a.data(), 2}, {b.data(), 2}, c.data(), 2, true);
  CHECK(c == std::vector<double>{11, 12, 13, 14});
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!isa_supported(Isa::avx2)) {
    MESSAGE("AVX2 not available on this host; skipping");
    return;
  }
  const KernelTable& s = table(Isa::scalar);
  const KernelTable& v = table(Isa::avx2);
  std::mt19937_64 g(7);

  // Odd sizes exercise the remainder loops.
  for (std::size_t len : {1u, 3u, 4u, 7u, 16u, 33u, 1001u}) {
    const auto x = random_vec(len, g), y = random_vec(len, g);
    CHECK(std::abs(s.dot(x.data(), y.data(), len) - v.dot(x.data(), y.data(), len)) <
          1e-12 * static_cast<double>(len));
    CHECK(std::abs(s.sum(x.data(), len) - v.sum(x.data(), len)) < 1e-12 * static_cast<double>(len));

    auto ys = y, yv = y;
    s.axpy(0.37, x.data(), ys.data(), len);
    v.axpy(0.37, x.data(), yv.data(), len);
    CHECK(max_abs_diff(ys, yv) < 1e-14);

    std::vector<double> ms(len), mv(len), as(len), av(len);
    s.mul(x.data(), y.data(), ms.data(), len);
    v.mul(x.data(), y.data(), mv.data(), len);
    s.add(x.data(), y.data(), as.data(), len);
    v.add(x.data(), y.data(), av.data(), len);
    CHECK(max_abs_diff(ms, mv) == 0.0);
    CHECK(max_abs_diff(as, av) == 0.0);
  }

  for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, {3u, 5u, 2u}, {9u, 13u, 17u}, {64u, 31u, 40u}}) {
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        const auto a = random_vec(m * k, g), b = random_vec(k * n, g);
        MatRef ra{a.data(), ta ? m : k, ta}, rb{b.data(), tb ? k : n, tb};
        auto cs = random_vec(m * n, g);
        auto cv = cs;
        s.gemm(m, n, k, ra, rb, cs.data(), n, true);
        v.gemm(m, n, k, ra, rb, cv.data(), n, true);
        CHECK(max_abs_diff(cs, cv) < 1e-12 * static_cast<double>(k));
      }
    }
  }
}

TEST_CASE("active table is one of the supported ones") {
  const Isa isa = active().isa;
  CHECK(isa_supported(isa));
}
