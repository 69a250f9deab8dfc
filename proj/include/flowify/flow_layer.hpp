#pragma once
// Common interface of every flowified layer.

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowify/diffarray.hpp"
#include "json.hpp"

namespace flowify {

/// Trainable tensor. The optimizer replaces `value` between steps.
struct Parameter {
  std::string name;
  DiffArray value;
};

/// Per-pass state: the tape (null when not differentiating) and the RNG.
/// Parameters are bound to the tape at most once per context.
class Context {
 public:
  Context(Tape* tape, Rng& rng) : tape_(tape), rng_(&rng) {}

  Tape* tape() const noexcept { return tape_; }
  Rng& rng() const noexcept { return *rng_; }

  /// Tracked leaf for `p` on this context's tape, or its constant value.
  DiffArray use(const Parameter& p);

 private:
  Tape* tape_;
  Rng* rng_;
  std::unordered_map<const Parameter*, DiffArray> bound_;
};

/// The inverse pass either samples every stochastic inverse or takes its mean.
enum class InverseMode { mean, stochastic };

struct LayerOutput {
  DiffArray z;
  /// Likelihood contribution sample, one value per batch row.
  DiffArray contribution;
};

class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual std::string kind() const = 0;
  /// Per-sample shapes (without the batch axis).
  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;

  /// x has shape [B, input_shape...].
  virtual LayerOutput forward(const DiffArray& x, Context& ctx) = 0;
  virtual DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) = 0;

  /// Trainable parameters with names that are unique within the layer.
  virtual std::vector<Parameter*> parameters() = 0;
  /// Layer description in the model-config schema; rebuilding from it gives
  /// a layer with the same parameter layout.
  virtual nlohmann::json describe() const = 0;

  /// True if the forward pass draws noise.
  virtual bool stochastic_forward() const = 0;

  /// Extra training penalty (scalar), if the layer defines one.
  virtual std::optional<DiffArray> auxiliary_loss(Context&) { return std::nullopt; }
};

using FlowLayerPtr = std::unique_ptr<FlowLayer>;

/// Batch size of an array shaped [B, per_sample...].
std::size_t batch_of(const DiffArray& x, const Shape& per_sample, const char* who);
Shape with_batch(std::size_t batch, const Shape& per_sample);

/// Dense weight + bias used by the small auxiliary networks.
struct DenseParams {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]
};

/// MLP with smooth leaky ReLUs between layers; the output layer is linear.
class SmallMlp {
 public:
  SmallMlp() = default;
  /// widths = {in, h1, ..., out}. The last layer starts at zero.
  SmallMlp(const std::string& prefix, std::vector<std::size_t> widths, double slope, Rng& rng);

  DiffArray apply(const DiffArray& x, Context& ctx) const;
  std::vector<Parameter*> parameters();
  const std::vector<std::size_t>& widths() const { return widths_; }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::size_t> widths_;
  double slope_ = 0.01;
  std::vector<DenseParams> layers_;
};

}  // namespace flowify
