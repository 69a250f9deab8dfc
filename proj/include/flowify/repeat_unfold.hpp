#pragma once
// Coordinate repetition with orthogonal noise, unfold/fold with multiplicities,
// and noise padding.

#include <memory>
#include <string>
#include <vector>

#include "flowify/diffarray.hpp"
#include "flowify/flow_layer.hpp"

namespace flowify {

enum class NoiseKind { normal, uniform_ball };

std::string noise_kind_name(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& name);

/// log volume of the unit ball in R^k.
double log_unit_ball_volume(std::size_t k);

struct UnfoldSpec {
  std::size_t channels = 1, height = 1, width = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  std::size_t padded_h() const { return height + 2 * pad_h; }
  std::size_t padded_w() const { return width + 2 * pad_w; }
  std::size_t out_h() const { return (padded_h() - kernel_h) / stride_h + 1; }
  std::size_t out_w() const { return (padded_w() - kernel_w) / stride_w + 1; }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t patch_count() const { return out_h() * out_w(); }
  std::size_t padded_numel() const { return channels * padded_h() * padded_w(); }

  /// Throws SpecError for zero extents or kernels larger than the padded image.
  void validate() const;
};

/// Precomputed gather map and multiplicities; immutable and shareable.
class UnfoldPlan {
 public:
  explicit UnfoldPlan(const UnfoldSpec& spec);

  const UnfoldSpec& spec() const noexcept { return spec_; }
  /// Padded-image offset (c * Hp * Wp + y * Wp + x) of each patch element,
  /// row-major over [patch, c * kh * kw + i * kw + j].
  const std::vector<std::size_t>& source() const noexcept { return source_; }
  /// Number of patches covering each padded pixel, [C * Hp * Wp].
  const std::vector<std::size_t>& multiplicity() const noexcept { return multiplicity_; }
  /// True iff every non-padding pixel is covered at least once.
  bool covers_interior() const;

 private:
  UnfoldSpec spec_;
  std::vector<std::size_t> source_;
  std::vector<std::size_t> multiplicity_;
};

using UnfoldPlanPtr = std::shared_ptr<const UnfoldPlan>;

/// Deterministic diagonal embedding: [B, C, Hp, Wp] -> [B * P, C * kh * kw].
DiffArray unfold_values(const DiffArray& padded, const UnfoldPlanPtr& plan);
/// Adjoint of unfold_values (sums every copy back into its pixel).
DiffArray fold_sum(const DiffArray& patches, const UnfoldPlanPtr& plan);
/// Per-pixel mean over covering patches; exact left inverse of unfold.
/// Pixels covered by no patch come back as zero.
DiffArray fold_mean(const DiffArray& patches, const UnfoldPlanPtr& plan);

struct RepeatOutput {
  DiffArray z;             // [B, N]
  DiffArray contribution;  // [B]
  DiffArray u;             // [B, N - 1], the complement coordinates before the sqrt(N) scaling
};

/// Orthonormal basis of the complement of (1, ..., 1)/sqrt(N), as an [N - 1, N] matrix
/// (Helmert rows).
DiffArray diagonal_complement_basis(std::size_t n);

/// x: [B] -> (x, ..., x) + sqrt(N) R_N(0, u), u drawn from `kind` with scale exp(log_scale).
RepeatOutput repeat_coordinate(const DiffArray& x, std::size_t n, NoiseKind kind, Rng& rng,
                               const DiffArray& log_scale = DiffArray::scalar(0.0));
/// Same embedding for a given complement draw u: [B, N - 1].
RepeatOutput repeat_coordinate_with(const DiffArray& x, std::size_t n, NoiseKind kind,
                                    const DiffArray& u,
                                    const DiffArray& log_scale = DiffArray::scalar(0.0));
/// -log p(u) for noise of `kind` with scale exp(log_scale), per row of u: [B, k] -> [B].
DiffArray repeat_noise_neg_logp(const DiffArray& u, NoiseKind kind, const DiffArray& log_scale);
/// Mean over the last axis: [B, N] -> [B].
DiffArray repeat_inverse(const DiffArray& z);

struct UnfoldOutput {
  DiffArray patches;       // [B * P, C * kh * kw]
  DiffArray contribution;  // [B]
};

/// Diagonal embedding plus orthogonal noise per pixel: direction uniform on the
/// sphere orthogonal to the pixel's diagonal, amplitude uniform-ball or chi
/// distributed; the whole draw is scaled by exp(log_scale) and sqrt(N).
UnfoldOutput unfold(const DiffArray& padded, const UnfoldPlanPtr& plan, NoiseKind kind, Rng& rng,
                    const DiffArray& log_scale = DiffArray::scalar(0.0));

struct PadOutput {
  DiffArray padded;        // [B, C, H + 2ph, W + 2pw]
  DiffArray contribution;  // [B]
};

/// Border cells filled with N(0, exp(log_scale)^2). `fill` (optional, [C*Hp*Wp])
/// restricts the noise to selected border cells; unselected cells stay zero and
/// do not enter the contribution.
PadOutput pad_flow(const DiffArray& x, std::size_t pad_h, std::size_t pad_w, Rng& rng,
                   const DiffArray& log_scale = DiffArray::scalar(0.0),
                   const std::vector<std::uint8_t>* fill = nullptr);
/// Removes the border: [B, C, Hp, Wp] -> [B, C, Hp - 2ph, Wp - 2pw].
DiffArray crop(const DiffArray& padded, std::size_t pad_h, std::size_t pad_w);

}  // namespace flowify
