#pragma once
// Elementwise bijections usable as flow layers.

#include "flowify/flow_layer.hpp"

namespace flowify {

class LeakyReluFlow final : public FlowLayer {
 public:
  LeakyReluFlow(Shape shape, double slope);

  std::string kind() const override { return "leaky_relu"; }
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override { return {}; }
  nlohmann::json describe() const override;
  bool stochastic_forward() const override { return false; }

  double slope() const { return slope_; }

 private:
  Shape shape_;
  double slope_;
};

/// Monotone rational-quadratic spline on [-bound, bound] with identity tails,
/// one independent spline per feature.
class RqSplineFlow final : public FlowLayer {
 public:
  static constexpr std::size_t kDefaultBins = 8;
  static constexpr double kDefaultBound = 2.0;
  static constexpr double kMinWidth = 1e-3;
  static constexpr double kMinHeight = 1e-3;
  static constexpr double kMinDerivative = 1e-3;

  /// Identity-initialized.
  RqSplineFlow(const std::string& prefix, Shape shape, std::size_t bins = kDefaultBins,
               double bound = kDefaultBound);

  std::string kind() const override { return "rq_spline"; }
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override {
    return {&raw_widths_, &raw_heights_, &raw_derivatives_};
  }
  nlohmann::json describe() const override;
  bool stochastic_forward() const override { return false; }

  std::size_t bins() const { return bins_; }
  double bound() const { return bound_; }
  std::size_t features() const { return features_; }
  /// Unconstrained parameters: [F, K], [F, K], [F, K - 1].
  Parameter& raw_widths() { return raw_widths_; }
  Parameter& raw_heights() { return raw_heights_; }
  Parameter& raw_derivatives() { return raw_derivatives_; }

  /// Constrained knots of one feature (plain doubles): K + 1 x-knots, y-knots, derivatives.
  struct Knots {
    std::vector<double> x, y, d;
  };
  Knots knots(std::size_t feature) const;

 private:
  struct Tables {
    DiffArray kx, ky, kd;  // [F, K + 1]
  };
  Tables tables(Context& ctx) const;

  Shape shape_;
  std::size_t features_;
  std::size_t bins_;
  double bound_;
  Parameter raw_widths_;
  Parameter raw_heights_;
  Parameter raw_derivatives_;
};

/// Inverse standard-normal CDF, (0, 1) -> R. With a standard-normal base a lone
/// probit layer is the uniform density on the unit cube.
class ProbitFlow final : public FlowLayer {
 public:
  explicit ProbitFlow(Shape shape) : shape_(std::move(shape)) {}

  std::string kind() const override { return "probit"; }
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override { return {}; }
  nlohmann::json describe() const override { return {{"type", "probit"}}; }
  bool stochastic_forward() const override { return false; }

 private:
  Shape shape_;
};

/// Reshape [C, H, W] -> [C * H * W]; zero contribution.
class FlattenFlow final : public FlowLayer {
 public:
  explicit FlattenFlow(Shape shape) : shape_(std::move(shape)) {}

  std::string kind() const override { return "flatten"; }
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return {numel(shape_)}; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override { return {}; }
  nlohmann::json describe() const override { return {{"type", "flatten"}}; }
  bool stochastic_forward() const override { return false; }

 private:
  Shape shape_;
};

}  // namespace flowify
