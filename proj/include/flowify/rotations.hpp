#pragma once
// SO(d) parametrized by the matrix exponential of a skew-symmetric generator.

#include <cstddef>
#include <memory>

#include "flowify/diffarray.hpp"
#include "flowify/flow_layer.hpp"

namespace flowify {

class RotationParam {
 public:
  RotationParam() = default;
  /// Generator entries start at zero (identity rotation).
  RotationParam(std::string name, std::size_t dim);
  /// Generator entries drawn from N(0, init_std^2).
  RotationParam(std::string name, std::size_t dim, double init_std, Rng& rng);

  std::size_t dim() const noexcept { return dim_; }
  /// d(d-1)/2 free entries, strict upper triangle in row-major order.
  static std::size_t free_count(std::size_t dim) { return dim * (dim - 1) / 2; }

  Parameter& generator() { return gen_; }
  const Parameter& generator() const { return gen_; }
  void set_generator(const std::vector<double>& values);

  /// S with S[i][j] = g, S[j][i] = -g for i < j.
  DiffArray skew(Context& ctx) const;
  /// R = exp(S).
  DiffArray materialize(Context& ctx) const;
  /// Rows of x times R^T, i.e. R x per row. x: [B, d].
  DiffArray apply(const DiffArray& x, Context& ctx) const;
  /// Rows of z times R, i.e. R^T z per row.
  DiffArray apply_inverse(const DiffArray& z, Context& ctx) const;

 private:
  std::size_t dim_ = 0;
  Parameter gen_;
  std::shared_ptr<const std::vector<std::size_t>> upper_;
  std::shared_ptr<const std::vector<std::size_t>> lower_;
  void build_index();
};

/// Initial generator spread; layers start near the identity.
inline constexpr double kRotationInitStd = 0.01;

}  // namespace flowify
