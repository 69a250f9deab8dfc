#pragma once
// Flowified linear layers, W = V * Sigma * U with rotations U in SO(n), V in SO(m).
//
//   m < n  funnel: deterministic forward, stochastic right inverse; the n - m
//          dropped rotated coordinates are scored by an inverse density.
//   m = n  bijection with log|det W| = sum(log sigma).
//   m > n  augmentation: m - n zero-mean Gaussian coordinates are appended
//          before scaling; the inverse is the Moore-Penrose pseudoinverse.

#include <optional>
#include <string>

#include "flowify/flow_layer.hpp"
#include "flowify/rotations.hpp"

namespace flowify {

enum class Regime { decreasing, preserving, increasing };

Regime regime_for(std::size_t in_dim, std::size_t out_dim);
std::string regime_name(Regime r);

/// Inverse-density outputs are clamped to this log-std range.
inline constexpr double kLogStdLimit = 7.0;

/// Density over the coordinates a dimension-decreasing map discards,
/// conditioned on what it keeps.
class InverseDensity {
 public:
  enum class Kind { fixed, conditional };

  InverseDensity() = default;
  /// `fixed`: N(0, exp(fixed_log_std)^2) per coordinate. `conditional`: MLP
  /// kept -> (mean, log_std) with two hidden layers of width 2 * max(8, dropped).
  InverseDensity(Kind kind, const std::string& prefix, std::size_t kept, std::size_t dropped,
                 Rng& rng, double fixed_log_std = 0.0);

  Kind kind() const noexcept { return kind_; }
  std::size_t kept() const noexcept { return kept_; }
  std::size_t dropped() const noexcept { return dropped_; }
  double fixed_log_std() const noexcept { return fixed_log_std_; }

  /// (mean, log_std), both [B, dropped].
  std::pair<DiffArray, DiffArray> params(const DiffArray& condition, Context& ctx) const;
  /// log p(dropped | condition), [B].
  DiffArray log_prob(const DiffArray& dropped, const DiffArray& condition, Context& ctx) const;
  /// Sample (stochastic) or mean, [B, dropped].
  DiffArray draw(const DiffArray& condition, Context& ctx, InverseMode mode) const;

  std::vector<Parameter*> parameters();

 private:
  Kind kind_ = Kind::fixed;
  std::size_t kept_ = 0;
  std::size_t dropped_ = 0;
  double fixed_log_std_ = 0.0;
  SmallMlp net_;
};

std::string inverse_kind_name(InverseDensity::Kind k);
InverseDensity::Kind parse_inverse_kind(const std::string& name);

struct SvdLinearOptions {
  InverseDensity::Kind inverse = InverseDensity::Kind::conditional;
  double fixed_log_std = 0.0;
  double rotation_init_std = kRotationInitStd;
};

class SvdLinear {
 public:
  SvdLinear() = default;
  SvdLinear(const std::string& prefix, std::size_t in_dim, std::size_t out_dim, Rng& rng,
            SvdLinearOptions options = {});

  std::size_t in_dim() const noexcept { return in_; }
  std::size_t out_dim() const noexcept { return out_; }
  Regime regime() const noexcept { return regime_for(in_, out_); }
  const SvdLinearOptions& options() const noexcept { return options_; }

  /// Dispatches on the regime. x: [B, n] -> z: [B, m].
  LayerOutput forward(const DiffArray& x, Context& ctx) const;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) const;

  LayerOutput forward_decreasing(const DiffArray& x, Context& ctx) const;
  LayerOutput forward_preserving(const DiffArray& x, Context& ctx) const;
  LayerOutput forward_increasing(const DiffArray& x, Context& ctx) const;
  DiffArray inverse_decreasing(const DiffArray& z, Context& ctx, InverseMode mode) const;
  DiffArray inverse_preserving(const DiffArray& z, Context& ctx) const;
  DiffArray inverse_increasing(const DiffArray& z, Context& ctx) const;

  /// Weight of the mean map z = W x + b, [m, n].
  DiffArray mean_weight(Context& ctx) const;

  RotationParam& u_rot() { return u_; }
  RotationParam& v_rot() { return v_; }
  const RotationParam& u_rot() const { return u_; }
  const RotationParam& v_rot() const { return v_; }
  Parameter& log_sigma() { return log_sigma_; }
  Parameter& bias() { return bias_; }
  const Parameter& log_sigma() const { return log_sigma_; }
  const Parameter& bias() const { return bias_; }
  /// Present iff m > n.
  Parameter* aug_log_scale() { return aug_log_scale_ ? &*aug_log_scale_ : nullptr; }
  /// Present iff m < n.
  InverseDensity* inverse_model() { return inverse_model_ ? &*inverse_model_ : nullptr; }
  const InverseDensity* inverse_model() const { return inverse_model_ ? &*inverse_model_ : nullptr; }

  std::vector<Parameter*> parameters();

 private:
  void require(Regime r, const char* op) const;
  DiffArray sigma_sum(Context& ctx) const;

  std::size_t in_ = 0;
  std::size_t out_ = 0;
  SvdLinearOptions options_;
  RotationParam u_;
  RotationParam v_;
  Parameter log_sigma_;
  Parameter bias_;
  std::optional<Parameter> aug_log_scale_;
  std::optional<InverseDensity> inverse_model_;
};

/// FlowLayer adapter over SvdLinear for vector inputs [B, n].
class LinearFlowLayer final : public FlowLayer {
 public:
  LinearFlowLayer(const std::string& prefix, std::size_t in_dim, std::size_t out_dim, Rng& rng,
                  SvdLinearOptions options = {});

  std::string kind() const override { return "linear"; }
  Shape input_shape() const override { return {linear_.in_dim()}; }
  Shape output_shape() const override { return {linear_.out_dim()}; }
  LayerOutput forward(const DiffArray& x, Context& ctx) override;
  DiffArray inverse(const DiffArray& z, Context& ctx, InverseMode mode) override;
  std::vector<Parameter*> parameters() override { return linear_.parameters(); }
  nlohmann::json describe() const override;
  bool stochastic_forward() const override { return linear_.regime() == Regime::increasing; }

  SvdLinear& linear() { return linear_; }

 private:
  SvdLinear linear_;
};

}  // namespace flowify
