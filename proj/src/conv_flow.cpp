#include "flowify/conv_flow.hpp"

#include "flowify/errors.hpp"

namespace flowify {

ConvFlow::ConvFlow(const std::string& prefix, const Shape& in_shape, std::size_t out_channels,
                   Rng& rng, ConvOptions options)
    : options_(options) {
  if (in_shape.size() != 3) {
    throw DimensionError("conv: input must be [C, H, W], got " + shape_string(in_shape));
  }
  UnfoldSpec spec;
  spec.channels = in_shape[0];
  spec.height = in_shape[1];
  spec.width = in_shape[2];
  spec.kernel_h = options.kernel_h;
  spec.kernel_w = options.kernel_w;
  spec.stride_h = options.stride_h;
  spec.stride_w = options.stride_w;
  spec.pad_h = options.pad_h;
  spec.pad_w = options.pad_w;
  plan_ = std::make_shared<const UnfoldPlan>(spec);
  if (!plan_->covers_interior()) {
    throw SpecError("conv: kernel " + std::to_string(spec.kernel_h) + "x" +
                    std::to_string(spec.kernel_w) + " with stride " +
                    std::to_string(spec.stride_h) + "x" + std::to_string(spec.stride_w) +
                    " leaves input pixels uncovered");
  }
  const auto& mult = plan_->multiplicity();
  pad_fill_.resize(mult.size());
  for (std::size_t i = 0; i < mult.size(); ++i) {
    pad_fill_[i] = mult[i] > 0;
    repeats_ = repeats_ || mult[i] > 1;
  }
  linear_ = SvdLinear(prefix + ".kernel", spec.patch_size(), out_channels, rng, options.linear);
  if (spec.pad_h || spec.pad_w) {
    pad_log_scale_ = Parameter{prefix + ".pad_log_scale", DiffArray::scalar(options_.init_log_scale)};
  }
  if (repeats_) {
    unfold_log_scale_ = Parameter{prefix + ".unfold_log_scale", DiffArray::scalar(options_.init_log_scale)};
  }
}

Shape ConvFlow::input_shape() const {
  const auto& s = plan_->spec();
  return {s.channels, s.height, s.width};
}

Shape ConvFlow::output_shape() const {
  const auto& s = plan_->spec();
  return {linear_.out_dim(), s.out_h(), s.out_w()};
}

bool ConvFlow::stochastic_forward() const {
  return pad_log_scale_.has_value() || repeats_ || linear_.regime() == Regime::increasing;
}

DiffArray ConvFlow::tiles_to_image(const DiffArray& t) const {
  const std::size_t p = plan_->spec().patch_count();
  const std::size_t co = linear_.out_dim();
  const std::size_t batch = t.dim(0) / p;
  auto index = std::make_shared<std::vector<std::size_t>>(batch * co * p);
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t q = 0; q < p; ++q) (*index)[n++] = (b * p + q) * co + c;
  return gather(t, index, {batch, co, plan_->spec().out_h(), plan_->spec().out_w()});
}

DiffArray ConvFlow::image_to_tiles(const DiffArray& y) const {
  const std::size_t p = plan_->spec().patch_count();
  const std::size_t co = linear_.out_dim();
  const std::size_t batch = y.dim(0);
  auto index = std::make_shared<std::vector<std::size_t>>(batch * co * p);
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t c = 0; c < co; ++c) (*index)[n++] = (b * co + c) * p + q;
  return gather(y, index, {batch * p, co});
}

ConvFlow::Stages ConvFlow::forward_stages(const DiffArray& x, Context& ctx) {
  const std::size_t batch = batch_of(x, input_shape(), "conv");
  const auto& s = plan_->spec();
  Stages st;
  st.pad = pad_log_scale_
               ? pad_flow(x, s.pad_h, s.pad_w, ctx.rng(), ctx.use(*pad_log_scale_), &pad_fill_)
               : PadOutput{x, DiffArray::zeros({batch})};
  st.unfold = unfold(st.pad.padded, plan_, options_.noise, ctx.rng(),
                     unfold_log_scale_ ? ctx.use(*unfold_log_scale_) : DiffArray::scalar(0.0));
  st.linear = linear_.forward(st.unfold.patches, ctx);
  const DiffArray per_image = sum_axis(reshape(st.linear.contribution, {batch, s.patch_count()}), 1);
  st.out.z = tiles_to_image(st.linear.z);
  st.out.contribution = add(add(st.pad.contribution, st.unfold.contribution), per_image);
  return st;
}

LayerOutput ConvFlow::forward(const DiffArray& x, Context& ctx) { return forward_stages(x, ctx).out; }

DiffArray ConvFlow::inverse(const DiffArray& z, Context& ctx, InverseMode mode) {
  batch_of(z, output_shape(), "conv inverse");
  const auto& s = plan_->spec();
  const DiffArray patches = linear_.inverse(image_to_tiles(z), ctx, mode);
  return crop(fold_mean(patches, plan_), s.pad_h, s.pad_w);
}

std::vector<Parameter*> ConvFlow::parameters() {
  std::vector<Parameter*> out;
  if (pad_log_scale_) out.push_back(&*pad_log_scale_);
  if (unfold_log_scale_) out.push_back(&*unfold_log_scale_);
  for (auto* p : linear_.parameters()) out.push_back(p);
  return out;
}

nlohmann::json ConvFlow::describe() const {
  const auto& s = plan_->spec();
  nlohmann::json j{{"type", "conv"},
                   {"out_channels", linear_.out_dim()},
                   {"kernel", {s.kernel_h, s.kernel_w}},
                   {"stride", {s.stride_h, s.stride_w}},
                   {"pad", {s.pad_h, s.pad_w}},
                   {"noise", noise_kind_name(options_.noise)},
                   {"init_log_scale", options_.init_log_scale}};
  if (linear_.regime() == Regime::decreasing) {
    j["inverse"] = inverse_kind_name(options_.linear.inverse);
    if (options_.linear.inverse == InverseDensity::Kind::fixed) {
      j["fixed_log_std"] = options_.linear.fixed_log_std;
    }
  }
  return j;
}

ReferenceKernel assemble_reference_kernel(const ConvFlow& layer, Rng& rng) {
  Context ctx(nullptr, rng);
  const DiffArray w = layer.kernel_linear().mean_weight(ctx);
  const auto& s = layer.spec();
  ReferenceKernel k;
  k.out_channels = layer.out_channels();
  k.in_channels = s.channels;
  k.kernel_h = s.kernel_h;
  k.kernel_w = s.kernel_w;
  k.weight = w.to_vector();
  k.bias = layer.kernel_linear().bias().value.to_vector();
  return k;
}

}  // namespace flowify
