#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "topkast/errors.hpp"

namespace topkast {

using Index = std::int64_t;

/// Sorted, duplicate-free set of flat offsets into one parameter tensor.
using IndexSet = std::vector<std::uint32_t>;

/// Batch-major activation block: one row per example, column-major storage
/// so that a feature across the batch is contiguous.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_product(std::span<const Index> shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>{});
}

inline std::string shape_string(std::span<const Index> shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

/// Dense row-major tensor of real scalars.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector<Scalar>::Zero(shape_product(shape_));
  }

  Tensor(std::vector<Index> shape, Vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_product(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  Tensor(std::vector<Index> shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector<Scalar>(Eigen::Map<const Vector<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Vector<Scalar>& values() { return data_; }
  const Vector<Scalar>& values() const { return data_; }

  std::span<Scalar> flat() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> flat() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Rank-2 view; rows are the leading dimension.
  Eigen::Map<const RowMajorMatrix<Scalar>> matrix() const {
    require_rank2();
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<RowMajorMatrix<Scalar>> matrix() {
    require_rank2();
    return {data_.data(), shape_[0], shape_[1]};
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
           std::equal(a.data_.data(), a.data_.data() + a.data_.size(), b.data_.data());
  }

 private:
  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw DimensionError("tensor shape " + shape_string(shape_) + " has a non-positive dimension");
    }
  }
  void require_rank2() const {
    if (shape_.size() != 2) throw DimensionError("expected a rank-2 tensor, got shape " + shape_string(shape_));
  }

  std::vector<Index> shape_;
  Vector<Scalar> data_;
};

/// Copies a batch-major matrix into a (rows, cols) tensor.
template <typename Scalar, typename Derived>
Tensor<Scalar> to_tensor(const Eigen::MatrixBase<Derived>& m) {
  Tensor<Scalar> out({m.rows(), m.cols()});
  out.matrix() = m;
  return out;
}

}  // namespace topkast
