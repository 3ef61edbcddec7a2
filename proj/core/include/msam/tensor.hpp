#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "msam/errors.hpp"

namespace msam {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Product of the dimensions; 1 for the rank-0 (scalar) shape.
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor. Every dimension is strictly positive; a rank-0
// tensor holds a single scalar.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape shape) : Tensor(std::move(shape), T{0}) {}
  Tensor(Shape shape, T fill);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  // The single element of a size-1 tensor.
  T item() const;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> make_vector(std::initializer_list<T> values) {
  return Tensor<T>(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> make_matrix(std::initializer_list<std::initializer_list<T>> rows);

// Splits a shape around `axis` into (outer, length, inner) extents so that the
// element (o, i, j) lives at flat offset (o * length + i) * inner + j.
struct AxisSplit {
  std::size_t outer;
  std::size_t length;
  std::size_t inner;
};
AxisSplit split_axis(const Shape& shape, std::size_t axis);

template <typename T>
bool all_finite(const Tensor<T>& x);

// C = A x B. Rank-2 operands, or equal-rank operands whose leading (batch)
// dimensions match exactly.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

inline constexpr double kNormalizeEps = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

// x / max(||x||_2, eps) along `axis`.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps = T(kNormalizeEps));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

// Normalizes the last axis with a 1/D variance and applies gamma, beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kLayerNormEps));

// ||G - I||_F for a square matrix.
template <typename T>
T frobenius_distance_to_identity(const Tensor<T>& g);

// Scalar helpers shared by the eager kernels and the tape.
template <typename T>
T stable_sigmoid(T x);
template <typename T>
T stable_softplus(T x);

}  // namespace msam
