#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nspark {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape);

/// Storage is over-aligned so vectorized reductions peel the same way for
/// every allocation; results then depend only on values, not on addresses.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// Dense row-major tensor. The last axis is the channel axis; `matrix()` views
/// the tensor as (product of leading extents) x (last extent).
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    check_extents();
    data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
  }

  Tensor(Shape shape, const std::vector<Scalar>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_extents();
    if (static_cast<Index>(data_.size()) != numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, std::vector<Scalar>{v}); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Index dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }

  /// Extent of the last axis (1 for rank-0 tensors).
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  MatrixMap<Scalar> matrix() { return {data_.data(), rows(), cols()}; }
  ConstMatrixMap<Scalar> matrix() const { return {data_.data(), rows(), cols()}; }
  ArrayMap<Scalar> array() { return {data_.data(), size()}; }
  ConstArrayMap<Scalar> array() const { return {data_.data(), size()}; }

  void reshape(Shape shape) {
    if (numel(shape) != size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (Index e : shape_) {
      if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape_));
    }
  }

  Shape shape_;
  AlignedVector<Scalar> data_;
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                         to_string(t.shape()));
  }
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar logit(Scalar p) {
  return std::log(p / (Scalar(1) - p));
}

}  // namespace nspark
