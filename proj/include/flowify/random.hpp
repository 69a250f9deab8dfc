#pragma once

#include <cstdint>
#include <random>

namespace flowify {

/// Explicit random source threaded through every stochastic operation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  /// Chi-squared with `dof` degrees of freedom.
  double chi_squared(double dof) {
    std::chi_squared_distribution<double> dist(dof);
    return dist(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  /// Independent stream derived from this one's seed material and a tag.
  Rng split(std::uint64_t tag);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// splitmix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace flowify
