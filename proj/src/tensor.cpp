// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::span<double> detail::TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor construction");
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(values));
}

Tensor Tensor::from_node(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  if (dim() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::values() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::operator[](std::size_t flat_index) const { return values()[flat_index]; }

double Tensor::at(std::size_t row, std::size_t col) const { return node_->value[row * cols() + col]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  shape();
  if (!node_->leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor copy(shape(), node_->value);
  copy.node_->requires_grad = node_->requires_grad && node_->leaf;
  return copy;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

}  // namespace peftmix
