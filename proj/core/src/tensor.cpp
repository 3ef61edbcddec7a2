#include "msam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msam {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_positive(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_positive(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_positive(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match " +
                     to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() needs a single element, shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> make_matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor<T>(Shape{n_rows, n_cols}, std::move(data));
}

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool ok = sa.size() >= 2 && sa.size() == sb.size() &&
                  std::equal(sa.begin(), sa.end() - 2, sb.begin()) &&
                  sa[sa.size() - 1] == sb[sb.size() - 2];
  if (!ok) throw ShapeError("matmul: cannot multiply " + to_string(sa) + " by " + to_string(sb));

  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  const std::size_t batch = a.size() / (m * k);

  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> c(out_shape);

  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* ab = pa + bi * m * k;
    const T* bb = pb + bi * k * n;
    T* cb = pc + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = cb + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = ab[i * k + p];
        const T* brow = bb + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(s));
  const std::size_t m = s[s.size() - 2];
  const std::size_t n = s.back();
  const std::size_t batch = x.size() / (m * n);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  Tensor<T> y(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data().data() + b * m * n;
    T* dst = y.data().data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      T mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      T sum = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= sum;
    }
  }
  return y;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      T mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      T sum = 0;
      for (std::size_t i = 0; i < len; ++i) sum += std::exp(in[base + i * inner] - mx);
      const T lse = mx + std::log(sum);
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] = in[base + i * inner] - lse;
    }
  }
  return y;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      T sq = 0;
      for (std::size_t i = 0; i < len; ++i) sq += in[base + i * inner] * in[base + i * inner];
      const T denom = std::max(std::sqrt(sq), eps);
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] = in[base + i * inner] / denom;
    }
  }
  return y;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
  return y;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_softplus(x[i]);
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: input " + to_string(x.shape()) + " with gamma " +
                     to_string(gamma.shape()) + " and beta " + to_string(beta.shape()));
  }
  Tensor<T> y(x.shape());
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T* out = y.data().data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += in[i];
    mean /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) out[i] = (in[i] - mean) * inv_std * gamma[i] + beta[i];
  }
  return y;
}

template <typename T>
T frobenius_distance_to_identity(const Tensor<T>& g) {
  if (g.rank() != 2 || g.dim(0) != g.dim(1)) {
    throw ShapeError("frobenius_distance_to_identity needs a square matrix, got " +
                     to_string(g.shape()));
  }
  const std::size_t k = g.dim(0);
  T sq = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const T d = g[i * k + j] - (i == j ? T(1) : T(0));
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

#define MSAM_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                  \
  template Tensor<T> make_matrix(std::initializer_list<std::initializer_list<T>>);          \
  template bool all_finite(const Tensor<T>&);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> l2_normalize(const Tensor<T>&, std::size_t, T);                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> softplus(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template T frobenius_distance_to_identity(const Tensor<T>&);                               \
  template T stable_sigmoid(T);                                                              \
  template T stable_softplus(T);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
