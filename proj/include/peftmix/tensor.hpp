// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace peftmix {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool leaf = true;

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Copies are shallow: two Tensor objects may refer to the same storage, the
/// way parameters are shared between a model and its optimizer. Use clone()
/// for an independent copy. Every constructor rejects non-finite values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const double> values() const;
  /// In-place access for initialisation and optimizer updates of leaves.
  std::span<double> mutable_values();

  double item() const;
  double operator[](std::size_t flat_index) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Constructing a Tape makes it the active tape of the calling thread until it
/// is destroyed. Operations whose inputs require gradients append a backward
/// closure; because entries are appended as results are produced, every
/// entry's inputs precede it. A tape is consumed by backward().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept;

  void record(std::function<void()> backward_fn);
  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Runs backward on the active tape. Gradients accumulate into leaves.
void backward(const Tensor& loss);

}  // namespace peftmix
