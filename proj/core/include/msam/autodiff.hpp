#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msam/tensor.hpp"

namespace msam {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient of a scalar loss keyed by parameter name.
template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

// Records primitive operations in evaluation order. Each non-leaf node keeps
// its forward function so the whole graph can be re-evaluated after leaf
// values change (used by finite-difference checking).
//
// Single writer: one forward/backward pass owns one tape.
template <typename T>
class Tape {
 public:
  using Inputs = std::span<const Tensor<T>* const>;
  using GradInputs = std::span<Tensor<T>* const>;
  using ForwardFn = std::function<Tensor<T>(Inputs)>;
  // grad_inputs[i] is null when input i does not lead to a parameter.
  using BackwardFn = std::function<void(Inputs inputs, const Tensor<T>& output,
                                        const Tensor<T>& grad_output, GradInputs grad_inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf. Names must be unique on the tape.
  Var<T> parameter(std::string name, Tensor<T> value);
  // Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);

  Var<T> record(std::string op, std::vector<Var<T>> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const;
  const std::string& op(Var<T> v) const;
  bool requires_grad(Var<T> v) const;

  // Replaces a leaf's value; call replay() to propagate.
  void set_value(Var<T> leaf, Tensor<T> value);

  // Recomputes every non-leaf node from its recorded inputs, in order.
  void replay();

  // True when a fresh forward pass reproduces every stored value bit-for-bit.
  bool replay_matches() const;

  // Reverse-mode gradients of `loss` (must hold one element) for every
  // parameter on the tape; disconnected parameters get exact zeros.
  Gradients<T> backward(Var<T> loss) const;

  std::vector<Var<T>> parameters();
  const std::string& parameter_name(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
  };

  const Node& node(Var<T> v) const;
  Tensor<T> evaluate(const Node& n) const;

  // deque keeps value references stable while nodes are appended.
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

// Differentiable primitives. All operands of one call must live on the same
// tape. Elementwise binary ops require identical shapes; use broadcast_to to
// expand explicitly.
namespace ad {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
// Numpy-style right-aligned broadcast; gradient sums over expanded axes.
template <typename T> Var<T> broadcast_to(Var<T> x, Shape shape);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T offset);

template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> sqrt(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> softplus(Var<T> x);
// min(x, ceiling); zero gradient where x > ceiling (x == ceiling passes).
template <typename T> Var<T> clamp_max(Var<T> x, T ceiling);

template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> log_softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> l2_normalize(Var<T> x, std::size_t axis, T eps = T(kNormalizeEps));
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(kLayerNormEps));

// Sum of all elements (rank-0 result).
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Sum along `axis`, removing it.
template <typename T> Var<T> sum_axis(Var<T> x, std::size_t axis);
// Main diagonal of a square matrix.
template <typename T> Var<T> diagonal(Var<T> x);
// ||G - I||_F over the last two axes of [... x k x k].
template <typename T> Var<T> frobenius_distance_to_identity(Var<T> g);

}  // namespace ad

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return ad::add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return ad::sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return ad::mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return ad::div(a, b); }
template <typename T> Var<T> operator-(Var<T> x) { return ad::scale(x, T(-1)); }

// Convenience wrapper matching the free-function style of the eager kernels.
template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var<T> loss) {
  return tape.backward(loss);
}

}  // namespace msam
