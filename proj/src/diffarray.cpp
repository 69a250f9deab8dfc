#include "flowify/diffarray.hpp"

#include <sstream>

#include "flowify/errors.hpp"

namespace flowify {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DiffArray::DiffArray() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

DiffArray::DiffArray(Shape shape, std::vector<double> values)
    : data_(std::make_shared<const std::vector<double>>(std::move(values))),
      shape_(std::move(shape)) {
  if (numel(shape_) != data_->size()) {
    throw DimensionError("DiffArray: shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_->size()) + " elements");
  }
}

DiffArray DiffArray::zeros(Shape shape) { return full(std::move(shape), 0.0); }

DiffArray DiffArray::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return DiffArray(std::move(shape), std::vector<double>(n, value));
}

DiffArray DiffArray::scalar(double value) { return DiffArray({}, {value}); }

DiffArray DiffArray::identity(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return DiffArray({d, d}, std::move(v));
}

DiffArray DiffArray::from(std::initializer_list<double> values) {
  return DiffArray({values.size()}, std::vector<double>(values));
}

DiffArray DiffArray::matrix(std::size_t rows, std::size_t cols,
                            std::initializer_list<double> values) {
  return DiffArray({rows, cols}, std::vector<double>(values));
}

std::size_t DiffArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

double DiffArray::item() const {
  if (data_->size() != 1) {
    throw DimensionError("item() on array of shape " + shape_string(shape_));
  }
  return (*data_)[0];
}

std::optional<std::size_t> DiffArray::node_id() const {
  if (!tape_) return std::nullopt;
  return node_;
}

DiffArray DiffArray::detach() const {
  DiffArray out = *this;
  out.tape_ = nullptr;
  out.node_ = 0;
  return out;
}

DiffArray DiffArray::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  DiffArray out = *this;
  out.shape_ = std::move(shape);
  return out;
}

DiffArray Tape::push(Shape shape, std::vector<double> values, Backward backward) {
  DiffArray out(std::move(shape), std::move(values));
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{out.size(), std::move(backward), {}});
  return out;
}

DiffArray Tape::watch(const DiffArray& value) {
  if (value.tape_ == this) return value;
  return push(value.shape(), value.to_vector(), nullptr);
}

DiffArray Tape::record(Shape shape, std::vector<double> values,
                       std::initializer_list<const DiffArray*> inputs, Backward backward) {
  Tape* tape = nullptr;
  for (const DiffArray* in : inputs) {
    if (!in->tape_) continue;
    if (tape && tape != in->tape_) {
      throw Error("operands belong to different tapes");
    }
    tape = in->tape_;
  }
  if (!tape) return DiffArray(std::move(shape), std::move(values));
  return tape->push(std::move(shape), std::move(values), std::move(backward));
}

void Tape::accumulate(const DiffArray& a, std::span<const double> g) {
  if (a.tape_ != this) return;
  Node& node = nodes_[a.node_];
  if (node.grad.empty()) node.grad.assign(node.size, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::backward(const DiffArray& out) {
  if (out.tape_ != this) throw Error("backward: output is not tracked by this tape");
  if (out.size() != 1) throw DimensionError("backward: output must be a single element");
  for (auto& node : nodes_) node.grad.clear();
  visited_ = 0;
  nodes_[out.node_].grad.assign(1, 1.0);
  for (std::size_t id = out.node_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    ++visited_;
    // The closure only writes into grads of earlier nodes.
    node.backward(node.grad, *this);
    // Intermediate gradients are not needed after propagation; leaves keep theirs.
    std::vector<double>().swap(node.grad);
  }
}

std::vector<double> Tape::grad(const DiffArray& a) const {
  if (a.tape_ != this) return std::vector<double>(a.size(), 0.0);
  const Node& node = nodes_[a.node_];
  if (node.grad.empty()) return std::vector<double>(node.size, 0.0);
  return node.grad;
}

}  // namespace flowify
