#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndk {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Error raised when a tensor holds NaN or Inf after an operation.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major N-d array. Layout for volumes is NCDHW.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}

  Tensor(Shape shape, const std::vector<Scalar>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (checked_numel(shape_) != static_cast<Index>(data_.size())) {
      throw std::invalid_argument("tensor shape " + shape_str(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }
  Index numel() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return data_; }
  std::span<const Scalar> values() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element access for rank-5 NCDHW tensors.
  Scalar& at(Index n, Index c, Index z, Index y, Index x) { return data_[offset5(n, c, z, y, x)]; }
  const Scalar& at(Index n, Index c, Index z, Index y, Index x) const { return data_[offset5(n, c, z, y, x)]; }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (checked_numel(shape) != numel()) {
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(Scalar(0)); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }
  void require_finite(const char* where) const {
    if (!all_finite()) throw NonFiniteError(std::string("non-finite values after ") + where);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  MatrixMap matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  ArrayMap array() { return ArrayMap(data_.data(), numel()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), numel()); }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index e : shape) {
      if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    }
    return shape_numel(shape);
  }
  std::size_t offset5(Index n, Index c, Index z, Index y, Index x) const {
    return static_cast<std::size_t>((((n * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x);
  }
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) {
      throw std::invalid_argument("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " does not fit " + shape_str(shape_));
    }
  }

  Shape shape_;
  // Fixed alignment keeps vectorized reductions in the same order from run to run.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

template <typename Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("dot: size mismatch");
  return (a.array() * b.array()).sum();
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  if (a.empty()) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ndk
