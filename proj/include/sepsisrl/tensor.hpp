#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sepsisrl/errors.hpp"

namespace sepsisrl {

/// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 (vector) and
/// 2 (matrix) are the shapes used throughout; higher ranks are not supported.
class Tensor {
 public:
  /// Rank-0 scalar holding 0.
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor zeros_like(const Tensor& other);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// 2-D element access (unchecked beyond debug builds).
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  /// Value of a rank-0 / single-element tensor.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  void fill(double v);
  void add_in_place(const Tensor& other);

  std::string shape_string() const;

  /// Throws DimensionError unless both tensors share `other`'s shape.
  static void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

 private:
  std::vector<std::size_t> shape_;  // empty == rank 0
  std::vector<double> data_;
  std::size_t cols_ = 1;  // stride of the leading dimension for rank 2
};

}  // namespace sepsisrl
