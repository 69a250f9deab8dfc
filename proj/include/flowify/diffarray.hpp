#pragma once
// Dense float64 arrays with reverse-mode differentiation.
//
// A DiffArray is an immutable value (shared buffer + shape). Arrays that are
// linked to a Tape carry a node id; every op whose inputs include a tracked
// array records a backward closure on that tape. Arrays without a tape are
// plain constants and are safe to share across threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowify/random.hpp"

namespace flowify {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

class DiffArray {
 public:
  /// Scalar zero.
  DiffArray();
  DiffArray(Shape shape, std::vector<double> values);

  static DiffArray zeros(Shape shape);
  static DiffArray full(Shape shape, double value);
  static DiffArray scalar(double value);
  static DiffArray identity(std::size_t d);
  static DiffArray from(std::initializer_list<double> values);
  static DiffArray matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_->size(); }
  bool empty() const noexcept { return data_->empty(); }

  std::span<const double> values() const noexcept { return *data_; }
  const double* data() const noexcept { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  std::vector<double> to_vector() const { return *data_; }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::optional<std::size_t> node_id() const;

  /// Same values, no tape linkage.
  DiffArray detach() const;
  /// Same buffer reinterpreted; element count must match.
  DiffArray reshaped(Shape shape) const;

 private:
  friend class Tape;
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Append-only record of differentiable operations for one backward pass.
class Tape {
 public:
  /// Receives the gradient w.r.t. the node output and pushes input gradients
  /// back through Tape::accumulate.
  using Backward = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a leaf; the result is tracked by this tape.
  DiffArray watch(const DiffArray& value);

  /// Creates the output of an op. `inputs` are only used to decide whether the
  /// result needs tracking; the closure must capture what it needs.
  static DiffArray record(Shape shape, std::vector<double> values,
                          std::initializer_list<const DiffArray*> inputs, Backward backward);

  /// Seeds d(out)/d(out) = 1 and runs the backward pass. `out` must hold one element.
  void backward(const DiffArray& out);

  /// Gradient of the last backward pass w.r.t. `a` (zeros if `a` is untracked,
  /// belongs to another tape, or was not on a path to the output).
  std::vector<double> grad(const DiffArray& a) const;

  /// True if gradients flowing into `a` are consumed by this tape.
  bool wants(const DiffArray& a) const noexcept { return a.tape_ == this; }
  void accumulate(const DiffArray& a, std::span<const double> g);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward closure ran in the last backward pass.
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Node {
    std::size_t size;
    Backward backward;
    std::vector<double> grad;
  };
  DiffArray push(Shape shape, std::vector<double> values, Backward backward);

  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
};

// ---- creation / sampling ---------------------------------------------------

DiffArray standard_normal(Shape shape, Rng& rng);
/// Uniform on [0, 1).
DiffArray uniform(Shape shape, Rng& rng);

// ---- elementwise (numpy-style broadcasting for binaries) -------------------

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray div(const DiffArray& a, const DiffArray& b);
DiffArray add_scalar(const DiffArray& a, double c);
DiffArray scale(const DiffArray& a, double c);
DiffArray neg(const DiffArray& a);
DiffArray exp(const DiffArray& a);
DiffArray log(const DiffArray& a);
DiffArray square(const DiffArray& a);
DiffArray sqrt(const DiffArray& a);
DiffArray softplus(const DiffArray& a);
DiffArray leaky_relu(const DiffArray& a, double slope);
/// slope * x + (1 - slope) * (softplus(x) - log 2): a C-infinity leaky ReLU through 0.
DiffArray smooth_leaky_relu(const DiffArray& a, double slope);
/// Gradient is zero where the value was clamped.
DiffArray clamp(const DiffArray& a, double lo, double hi);
/// Inverse standard-normal CDF (input in (0, 1)).
DiffArray probit(const DiffArray& a);
/// select ? a : b elementwise; all three share one shape.
DiffArray where(const std::vector<std::uint8_t>& select, const DiffArray& a, const DiffArray& b);

inline DiffArray operator+(const DiffArray& a, const DiffArray& b) { return add(a, b); }
inline DiffArray operator-(const DiffArray& a, const DiffArray& b) { return sub(a, b); }
inline DiffArray operator*(const DiffArray& a, const DiffArray& b) { return mul(a, b); }
inline DiffArray operator/(const DiffArray& a, const DiffArray& b) { return div(a, b); }
inline DiffArray operator-(const DiffArray& a) { return neg(a); }
inline DiffArray operator+(const DiffArray& a, double c) { return add_scalar(a, c); }
inline DiffArray operator-(const DiffArray& a, double c) { return add_scalar(a, -c); }
inline DiffArray operator*(const DiffArray& a, double c) { return scale(a, c); }
inline DiffArray operator*(double c, const DiffArray& a) { return scale(a, c); }

// ---- reductions ------------------------------------------------------------

/// Sum of all elements, shape {}.
DiffArray sum(const DiffArray& a);
DiffArray mean(const DiffArray& a);
/// Reduces one axis.
DiffArray sum_axis(const DiffArray& a, std::size_t axis, bool keepdim = false);
/// Sums every axis but the first: [B, ...] -> [B].
DiffArray sum_rows(const DiffArray& a);

// ---- structure -------------------------------------------------------------

DiffArray reshape(const DiffArray& a, Shape shape);
/// out[i] = a[index[i]], result has `shape`.
DiffArray gather(const DiffArray& a, std::shared_ptr<const std::vector<std::size_t>> index,
                 Shape shape);
/// out = zeros(shape); out[index[i]] += a[i].
DiffArray scatter_add(const DiffArray& a, std::shared_ptr<const std::vector<std::size_t>> index,
                      Shape shape);
/// Columns [begin, end) of the last axis.
DiffArray slice_last(const DiffArray& a, std::size_t begin, std::size_t end);
/// Concatenation along the last axis; leading axes must agree.
DiffArray concat_last(const std::vector<DiffArray>& parts);
/// 2-D transpose.
DiffArray transpose(const DiffArray& a);

// ---- linear algebra --------------------------------------------------------

/// op(a) * op(b) for 2-D operands.
DiffArray matmul(const DiffArray& a, const DiffArray& b, bool trans_a = false,
                 bool trans_b = false);
/// exp(S) by scaling and squaring; the gradient flows through the unrolled graph.
DiffArray matrix_exp(const DiffArray& s);
/// Softmax over the last axis.
DiffArray softmax_last(const DiffArray& a);

// ---- densities -------------------------------------------------------------

/// Diagonal Gaussian log-density summed over every axis but the first
/// (rank-1 inputs are treated as a single row and give a scalar).
/// mean and log_std broadcast against x.
DiffArray gaussian_logpdf(const DiffArray& x, const DiffArray& mean, const DiffArray& log_std);
/// Standard normal log-density, summed per row.
DiffArray standard_normal_logpdf(const DiffArray& x);

// ---- plain numeric helpers -------------------------------------------------

/// Induced 1-norm (max column abs sum) of a square matrix.
double matrix_norm1(const DiffArray& s);
/// Squaring count used by matrix_exp.
int matrix_exp_squarings(double norm1);
/// Inverse standard-normal CDF on doubles.
double inverse_normal_cdf(double p);
double normal_cdf(double z);

}  // namespace flowify
