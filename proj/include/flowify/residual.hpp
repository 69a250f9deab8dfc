#pragma once
// Residual connection: duplicate the input with orthogonal noise, run two
// branches, add the results. The sum is inverted by a Gaussian over one
// summand conditioned on the sum.

#include "flowify/flow_layer.hpp"

namespace flowify {

struct ResidualOptions {
  /// Initial log-scale of the duplication noise.
  double init_log_scale = 0.0;
  /// Hidden width of the sum-inverse network; 0 selects 2 * max(8, D).
  std::size_t hidden = 0;
};

class ResidualFlowBlock final : public FlowLayer {
 public:
  /// Both branches map input_shape to a common output shape.
  ResidualFlowBlock(const std::string& prefix, Shape input_shape, std::vector<FlowLayerPtr> branch_a,
                    std::vector<FlowLayerPtr> branch_b, Rng& rng, ResidualOptions options = {});

  std::string kind() const override { return "residual"; }
  Shape input_shape() const override { return input_shape_; }
  Shape output_shape() const override { return output_shape_; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override;
  nlohmann::json describe() const override;
  bool stochastic_forward() const override { return true; }

  struct Parts {
    DiffArray y;
    DiffArray duplication;  // [B]
    DiffArray branch_a;     // [B]
    DiffArray branch_b;     // [B]
    DiffArray sum;          // [B]
    DiffArray total;        // [B]
  };
  Parts forward_parts(const DiffArray& x, Context& ctx);

  Parameter& log_scale() { return log_scale_; }
  const std::vector<FlowLayerPtr>& branch_a() const { return a_; }
  const std::vector<FlowLayerPtr>& branch_b() const { return b_; }

 private:
  /// (mean, log_std) of the first summand given the flattened sum [B, D].
  std::pair<DiffArray, DiffArray> sum_density(const DiffArray& y_flat, Context& ctx) const;

  Shape input_shape_;
  Shape output_shape_;
  std::vector<FlowLayerPtr> a_;
  std::vector<FlowLayerPtr> b_;
  double init_log_scale_ = 0.0;
  Parameter log_scale_;
  SmallMlp sum_net_;
};

}  // namespace flowify
