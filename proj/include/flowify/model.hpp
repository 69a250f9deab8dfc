#pragma once
// Sequential flow models against a standard-normal base.

#include <optional>

#include "flowify/data.hpp"
#include "flowify/flow_layer.hpp"

namespace flowify {

/// Per-layer contribution samples plus the base term, each [B].
struct LikelihoodLedger {
  std::vector<DiffArray> layers;
  DiffArray base;
  DiffArray total;

  /// Batch means of every layer term, then the base term.
  std::vector<double> layer_means() const;
  double mean_total() const;
};

class FlowModel {
 public:
  /// Throws ConfigError if consecutive layer shapes do not chain.
  FlowModel(Shape input_shape, std::vector<FlowLayerPtr> layers);

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const;
  std::size_t size() const { return layers_.size(); }
  FlowLayer& layer(std::size_t i) { return *layers_[i]; }
  const std::vector<FlowLayerPtr>& layers() const { return layers_; }

  /// One stochastic forward pass. Exact when no layer draws noise, otherwise a
  /// single-sample lower-bound estimate. Throws NonFiniteError naming the layer.
  LikelihoodLedger log_likelihood_sample(const DiffArray& x, Context& ctx) const;
  /// Inverses in reverse order.
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) const;
  /// z ~ N(0, I) pushed through the inverses.
  DiffArray sample(std::size_t n, Context& ctx, InverseMode mode) const;
  /// Sum of layer auxiliary losses (scalar zero if none).
  DiffArray auxiliary_loss(Context& ctx) const;

  std::vector<Parameter*> parameters() const;
  /// True if no layer draws noise in its forward pass.
  bool deterministic() const;
  /// {"input_shape": [...], "layers": [...]}
  nlohmann::json describe() const;

 private:
  Shape input_shape_;
  std::vector<FlowLayerPtr> layers_;
};

struct EvalResult {
  std::size_t count = 0;
  /// Mean negative log-likelihood of the model input, in nats.
  double nll = 0.0;
  /// Only for integer-pixel datasets.
  std::optional<double> bpd;
};

/// Threads used by evaluate(): FLOWIFY_THREADS if set, else the hardware count.
std::size_t eval_threads();

/// Frozen-model evaluation over fixed chunks, each with its own RNG derived
/// from `seed`, so results do not depend on the thread count. Image data are
/// dequantized; bpd = -log2 p(y) / D + 8.
EvalResult evaluate(const FlowModel& model, const Dataset& data, std::uint64_t seed,
                    std::size_t chunk = 250, std::size_t threads = 0);

double bits_per_dim(const FlowModel& model, const Dataset& images, std::uint64_t seed);

/// Converts a mean log-likelihood of dequantized pixels into bits per dimension.
double nll_to_bpd(double nll_nats, std::size_t dims);

}  // namespace flowify
