#include "flowify/residual.hpp"

#include <algorithm>
#include <cmath>

#include "flowify/errors.hpp"
#include "flowify/linear_flow.hpp"

namespace flowify {
namespace {

Shape chain(const Shape& in, const std::vector<FlowLayerPtr>& layers, const char* name) {
  Shape cur = in;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i]->input_shape() != cur) {
      throw ConfigError(std::string("residual ") + name + " layer " + std::to_string(i) +
                        " expects " + shape_string(layers[i]->input_shape()) + ", gets " +
                        shape_string(cur));
    }
    cur = layers[i]->output_shape();
  }
  return cur;
}

}  // namespace

ResidualFlowBlock::ResidualFlowBlock(const std::string& prefix, Shape input_shape,
                                     std::vector<FlowLayerPtr> branch_a,
                                     std::vector<FlowLayerPtr> branch_b, Rng& rng,
                                     ResidualOptions options)
    : input_shape_(std::move(input_shape)), a_(std::move(branch_a)), b_(std::move(branch_b)) {
  const Shape out_a = chain(input_shape_, a_, "branch_a");
  const Shape out_b = chain(input_shape_, b_, "branch_b");
  if (out_a != out_b) {
    throw DimensionError("residual branches disagree: " + shape_string(out_a) + " vs " +
                         shape_string(out_b));
  }
  output_shape_ = out_a;
  init_log_scale_ = options.init_log_scale;
  log_scale_ = Parameter{prefix + ".dup_log_scale", DiffArray::scalar(options.init_log_scale)};
  const std::size_t d = numel(output_shape_);
  const std::size_t hidden = options.hidden ? options.hidden : 2 * std::max<std::size_t>(8, d);
  sum_net_ = SmallMlp(prefix + ".sum_net", {d, hidden, 2 * d}, 0.01, rng);
}

std::pair<DiffArray, DiffArray> ResidualFlowBlock::sum_density(const DiffArray& y_flat,
                                                               Context& ctx) const {
  const std::size_t d = y_flat.dim(1);
  const DiffArray out = sum_net_.apply(y_flat, ctx);
  const DiffArray mu = add(scale(y_flat, 0.5), slice_last(out, 0, d));
  const DiffArray log_std = clamp(slice_last(out, d, 2 * d), -kLogStdLimit, kLogStdLimit);
  return {mu, log_std};
}

ResidualFlowBlock::Parts ResidualFlowBlock::forward_parts(const DiffArray& x, Context& ctx) {
  const std::size_t batch = batch_of(x, input_shape_, "residual");
  const DiffArray ls = ctx.use(log_scale_);
  const DiffArray u = mul(standard_normal(x.shape(), ctx.rng()), exp(ls));
  // (x, x) + R_2(0, sqrt(2) u) = (x + u, x - u)
  Parts p;
  const double d_in = static_cast<double>(numel(input_shape_));
  p.duplication = add_scalar(neg(gaussian_logpdf(reshape(u, {batch, numel(input_shape_)}),
                                                 DiffArray::scalar(0.0), ls)),
                             d_in * std::log(2.0));
  DiffArray ya = add(x, u), yb = sub(x, u);
  p.branch_a = DiffArray::zeros({batch});
  p.branch_b = DiffArray::zeros({batch});
  for (auto& layer : a_) {
    auto o = layer->forward(ya, ctx);
    ya = o.z;
    p.branch_a = add(p.branch_a, o.contribution);
  }
  for (auto& layer : b_) {
    auto o = layer->forward(yb, ctx);
    yb = o.z;
    p.branch_b = add(p.branch_b, o.contribution);
  }
  p.y = add(ya, yb);
  const std::size_t d = numel(output_shape_);
  auto [mu, log_std] = sum_density(reshape(p.y, {batch, d}), ctx);
  p.sum = gaussian_logpdf(reshape(ya, {batch, d}), mu, log_std);
  p.total = add(add(add(p.duplication, p.branch_a), p.branch_b), p.sum);
  return p;
}

LayerOutput ResidualFlowBlock::forward(const DiffArray& x, Context& ctx) {
  Parts p = forward_parts(x, ctx);
  return {p.y, p.total};
}

DiffArray ResidualFlowBlock::inverse(const DiffArray& z, Context& ctx, InverseMode mode) {
  const std::size_t batch = batch_of(z, output_shape_, "residual inverse");
  const std::size_t d = numel(output_shape_);
  auto [mu, log_std] = sum_density(reshape(z, {batch, d}), ctx);
  DiffArray ya_flat = mu;
  if (mode == InverseMode::stochastic) {
    ya_flat = add(mu, mul(exp(log_std), standard_normal(mu.shape(), ctx.rng())));
  }
  DiffArray xa = reshape(ya_flat, z.shape());
  DiffArray xb = sub(z, xa);
  for (auto it = a_.rbegin(); it != a_.rend(); ++it) xa = (*it)->inverse(xa, ctx, mode);
  for (auto it = b_.rbegin(); it != b_.rend(); ++it) xb = (*it)->inverse(xb, ctx, mode);
  return scale(add(xa, xb), 0.5);
}

std::vector<Parameter*> ResidualFlowBlock::parameters() {
  std::vector<Parameter*> out{&log_scale_};
  for (auto& l : a_)
    for (auto* p : l->parameters()) out.push_back(p);
  for (auto& l : b_)
    for (auto* p : l->parameters()) out.push_back(p);
  for (auto* p : sum_net_.parameters()) out.push_back(p);
  return out;
}

nlohmann::json ResidualFlowBlock::describe() const {
  nlohmann::json a = nlohmann::json::array(), b = nlohmann::json::array();
  for (const auto& l : a_) a.push_back(l->describe());
  for (const auto& l : b_) b.push_back(l->describe());
  return {{"type", "residual"},
          {"branch_a", a},
          {"branch_b", b},
          {"init_log_scale", init_log_scale_},
          {"hidden", sum_net_.widths().size() > 1 ? sum_net_.widths()[1] : 0}};
}

}  // namespace flowify
