#include "flowify/flow_layer.hpp"

#include <cmath>

#include "flowify/errors.hpp"

namespace flowify {

DiffArray Context::use(const Parameter& p) {
  if (!tape_) return p.value;
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  DiffArray leaf = tape_->watch(p.value);
  bound_.emplace(&p, leaf);
  return leaf;
}

std::size_t batch_of(const DiffArray& x, const Shape& per_sample, const char* who) {
  if (x.rank() != per_sample.size() + 1 ||
      !std::equal(per_sample.begin(), per_sample.end(), x.shape().begin() + 1)) {
    throw DimensionError(std::string(who) + ": expected [B, " + shape_string(per_sample) +
                         "], got " + shape_string(x.shape()));
  }
  return x.dim(0);
}

Shape with_batch(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

SmallMlp::SmallMlp(const std::string& prefix, std::vector<std::size_t> widths, double slope,
                   Rng& rng)
    : widths_(std::move(widths)), slope_(slope) {
  if (widths_.size() < 2) throw ConfigError("SmallMlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const bool last = l + 2 == widths_.size();
    std::vector<double> w(in * out, 0.0);
    if (!last) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(in));
      for (auto& v : w) v = stddev * rng.normal();
    }
    const std::string base = prefix + ".dense" + std::to_string(l);
    layers_.push_back({Parameter{base + ".weight", DiffArray({in, out}, std::move(w))},
                       Parameter{base + ".bias", DiffArray::zeros({out})}});
  }
}

DiffArray SmallMlp::apply(const DiffArray& x, Context& ctx) const {
  DiffArray h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = add(matmul(h, ctx.use(layers_[l].weight)), ctx.use(layers_[l].bias));
    if (l + 1 < layers_.size()) h = smooth_leaky_relu(h, slope_);
  }
  return h;
}

std::vector<Parameter*> SmallMlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

}  // namespace flowify
