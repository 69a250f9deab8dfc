#pragma once
// Self-check suites run by `flowify verify`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowify/model.hpp"

namespace flowify {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Random instances per check (suites clamp this to their own minimum of 1).
  std::size_t trials = 1000;
};

/// Suite names in the order `verify --suite all` runs them.
std::vector<std::string> verify_suite_names();
/// Throws ConfigError for an unknown suite.
std::vector<CheckResult> run_verify_suite(const std::string& suite, const VerifyOptions& options);

/// Fills every parameter with N(0, std^2) draws; used to move layers away from
/// their near-identity initialization.
void randomize_parameters(const std::vector<Parameter*>& params, Rng& rng, double std);

/// d(mean log-likelihood)/d(theta) for every parameter, on one batch with a fixed
/// noise seed.
std::vector<std::vector<double>> likelihood_gradient(const FlowModel& model, const DiffArray& x,
                                                     std::uint64_t noise_seed);
/// Mean log-likelihood with the same noise seed.
double likelihood_mean(const FlowModel& model, const DiffArray& x, std::uint64_t noise_seed);

struct GradientCheck {
  std::string parameter;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Fourth-order central differences with step `h` under common random numbers. An entry's
/// error is |g - fd| / max(|g|, |fd|, floor).
std::vector<GradientCheck> check_gradients(FlowModel& model, const DiffArray& x,
                                           std::uint64_t noise_seed, double h = 1e-4,
                                           double floor = 1e-6);

}  // namespace flowify
