#pragma once
// Flowified 2-D convolution: Linear o Unfold o Pad, inverted stage by stage.

#include <optional>

#include "flowify/linear_flow.hpp"
#include "flowify/repeat_unfold.hpp"

namespace flowify {

struct ConvOptions {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  NoiseKind noise = NoiseKind::normal;
  /// Initial log-scale of the padding and repetition noise.
  double init_log_scale = 0.0;
  SvdLinearOptions linear;
};

class ConvFlow final : public FlowLayer {
 public:
  /// in_shape = {C, H, W}. Throws SpecError if some input pixel lies in no patch.
  ConvFlow(const std::string& prefix, const Shape& in_shape, std::size_t out_channels, Rng& rng,
           ConvOptions options = {});

  std::string kind() const override { return "conv"; }
  Shape input_shape() const override;
  Shape output_shape() const override;
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override;
  nlohmann::json describe() const override;
  bool stochastic_forward() const override;

  /// Stage outputs of one forward pass, for tests of the composition.
  struct Stages {
    PadOutput pad;
    UnfoldOutput unfold;
    LayerOutput linear;  // on [B * P, C * kh * kw]
    LayerOutput out;     // final image and total contribution
  };
  Stages forward_stages(const DiffArray& x, Context& ctx);

  const UnfoldSpec& spec() const { return plan_->spec(); }
  const UnfoldPlanPtr& plan() const { return plan_; }
  std::size_t out_channels() const { return linear_.out_dim(); }
  const ConvOptions& options() const { return options_; }
  SvdLinear& kernel_linear() { return linear_; }
  const SvdLinear& kernel_linear() const { return linear_; }
  Parameter* pad_log_scale() { return pad_log_scale_ ? &*pad_log_scale_ : nullptr; }
  Parameter* unfold_log_scale() { return unfold_log_scale_ ? &*unfold_log_scale_ : nullptr; }

 private:
  /// [B * P, Cout] <-> [B, Cout, Ho, Wo].
  DiffArray tiles_to_image(const DiffArray& t) const;
  DiffArray image_to_tiles(const DiffArray& y) const;

  ConvOptions options_;
  UnfoldPlanPtr plan_;
  std::vector<std::uint8_t> pad_fill_;
  bool repeats_ = false;
  SvdLinear linear_;
  std::optional<Parameter> pad_log_scale_;
  std::optional<Parameter> unfold_log_scale_;
};

struct ReferenceKernel {
  std::vector<double> weight;  // [Cout, C, kh, kw] row-major
  std::vector<double> bias;    // [Cout]
  std::size_t out_channels, in_channels, kernel_h, kernel_w;
};

/// Dense kernel of the mean map, assembled from V Sigma U.
ReferenceKernel assemble_reference_kernel(const ConvFlow& layer, Rng& rng);

}  // namespace flowify
