#include "msam/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

namespace msam {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::parameter(std::string name, Tensor<T> value) {
  if (params_.count(name)) throw ContractError("duplicate parameter name on tape: " + name);
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.requires_grad = true;
  n.trainable = true;
  n.name = name;
  params_.emplace(std::move(name), nodes_.size());
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(std::string op, std::vector<Var<T>> inputs, ForwardFn forward,
                       BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.tape() != this || v.id() >= nodes_.size()) {
      throw ContractError(n.op + ": operand does not belong to this tape");
    }
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = evaluate(n);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var<T> v) const {
  if (&v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable not on this tape");
  return nodes_[v.id()];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  return node(v).value;
}

template <typename T>
const std::string& Tape<T>::op(Var<T> v) const {
  return node(v).op;
}

template <typename T>
bool Tape<T>::requires_grad(Var<T> v) const {
  return node(v).requires_grad;
}

template <typename T>
Tensor<T> Tape<T>::evaluate(const Node& n) const {
  std::vector<const Tensor<T>*> in;
  in.reserve(n.inputs.size());
  for (auto id : n.inputs) in.push_back(&nodes_[id].value);
  return n.forward(Inputs(in.data(), in.size()));
}

template <typename T>
void Tape<T>::set_value(Var<T> leaf, Tensor<T> value) {
  auto& n = nodes_.at(leaf.id());
  if (n.forward) throw ContractError("set_value on non-leaf node '" + n.op + "'");
  if (n.value.shape() != value.shape()) {
    throw ShapeError("set_value: expected " + to_string(n.value.shape()) + ", got " +
                     to_string(value.shape()));
  }
  n.value = std::move(value);
}

template <typename T>
void Tape<T>::replay() {
  for (auto& n : nodes_) {
    if (n.forward) n.value = evaluate(n);
  }
}

template <typename T>
bool Tape<T>::replay_matches() const {
  // Values are compared against stored ones, which are the inputs of later
  // nodes, so a node-by-node check covers the whole graph.
  for (const auto& n : nodes_) {
    if (n.forward && !(evaluate(n) == n.value)) return false;
  }
  return true;
}

template <typename T>
Gradients<T> Tape<T>::backward(Var<T> loss) const {
  const auto& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + to_string(ln.value.shape()));
  }
  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  grads[loss.id()] = Tensor<T>(ln.value.shape(), T(1));

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !grads[i]) continue;
    std::vector<const Tensor<T>*> in;
    std::vector<Tensor<T>*> gin;
    for (auto id : n.inputs) {
      in.push_back(&nodes_[id].value);
      if (nodes_[id].requires_grad) {
        if (!grads[id]) grads[id] = Tensor<T>(nodes_[id].value.shape());
        gin.push_back(&*grads[id]);
      } else {
        gin.push_back(nullptr);
      }
    }
    n.backward(Inputs(in.data(), in.size()), n.value, *grads[i], GradInputs(gin.data(), gin.size()));
  }

  Gradients<T> out;
  for (const auto& [name, id] : params_) {
    out.emplace(name, grads[id] ? std::move(*grads[id]) : Tensor<T>(nodes_[id].value.shape()));
  }
  return out;
}

template <typename T>
std::vector<Var<T>> Tape<T>::parameters() {
  std::vector<Var<T>> out;
  for (const auto& [name, id] : params_) out.emplace_back(this, id);
  return out;
}

template <typename T>
const std::string& Tape<T>::parameter_name(Var<T> v) const {
  const auto& n = node(v);
  if (!n.trainable) throw ContractError("variable is not a parameter");
  return n.name;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace ad {
namespace {

template <typename T>
void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

// Maps every output offset to the input offset it reads under broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  if (in.size() > out.size()) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(in) + " to " + to_string(out));
  }
  const std::size_t pad = out.size() - in.size();
  std::vector<std::size_t> in_stride(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t a = out.size(); a-- > pad;) {
    const std::size_t d = in[a - pad];
    if (d != out[a] && d != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + to_string(in) + " to " + to_string(out));
    }
    in_stride[a] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const std::size_t total = shape_size(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t offset = 0;
  for (std::size_t f = 0; f < total; ++f) {
    map[f] = offset;
    for (std::size_t a = out.size(); a-- > 0;) {
      ++idx[a];
      offset += in_stride[a];
      if (idx[a] < out[a]) break;
      offset -= in_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  return map;
}

template <typename T, typename F, typename G>
Var<T> unary(const char* op, Var<T> x, F f, G dfdx) {
  // dfdx(x, y) is the local derivative.
  return x.tape().record(
      op, {x},
      [f](typename Tape<T>::Inputs in) {
        Tensor<T> y(in[0]->shape());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = f((*in[0])[i]);
        return y;
      },
      [dfdx](typename Tape<T>::Inputs in, const Tensor<T>& y, const Tensor<T>& g,
             typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dx = *gin[0];
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * dfdx((*in[0])[i], y[i]);
      });
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return a.tape().record(
      "matmul", {a, b},
      [](typename Tape<T>::Inputs in) { return msam::matmul(*in[0], *in[1]); },
      [](typename Tape<T>::Inputs in, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (gin[0]) accumulate(gin[0], msam::matmul(g, msam::transpose(*in[1])));
        if (gin[1]) accumulate(gin[1], msam::matmul(msam::transpose(*in[0]), g));
      });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  return x.tape().record(
      "transpose", {x}, [](typename Tape<T>::Inputs in) { return msam::transpose(*in[0]); },
      [](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (gin[0]) accumulate(gin[0], msam::transpose(g));
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return x.tape().record(
      "reshape", {x},
      [shape](typename Tape<T>::Inputs in) { return in[0]->reshaped(shape); },
      [](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto d = gin[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
}

template <typename T>
Var<T> broadcast_to(Var<T> x, Shape shape) {
  auto map = std::make_shared<const std::vector<std::size_t>>(broadcast_map(x.shape(), shape));
  return x.tape().record(
      "broadcast_to", {x},
      [shape, map](typename Tape<T>::Inputs in) {
        Tensor<T> y(shape);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*in[0])[(*map)[i]];
        return y;
      },
      [map](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
            typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dx = *gin[0];
        for (std::size_t i = 0; i < g.size(); ++i) dx[(*map)[i]] += g[i];
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  return a.tape().record(
      "add", {a, b},
      [](typename Tape<T>::Inputs in) {
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*in[1])[i];
        return y;
      },
      [](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        accumulate(gin[0], g);
        accumulate(gin[1], g);
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  return a.tape().record(
      "sub", {a, b},
      [](typename Tape<T>::Inputs in) {
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] -= (*in[1])[i];
        return y;
      },
      [](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        accumulate(gin[0], g);
        if (gin[1]) {
          auto& db = *gin[1];
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  return a.tape().record(
      "mul", {a, b},
      [](typename Tape<T>::Inputs in) {
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= (*in[1])[i];
        return y;
      },
      [](typename Tape<T>::Inputs in, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (gin[0]) {
          auto& da = *gin[0];
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (*in[1])[i];
        }
        if (gin[1]) {
          auto& db = *gin[1];
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * (*in[0])[i];
        }
      });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape("div", a, b);
  return a.tape().record(
      "div", {a, b},
      [](typename Tape<T>::Inputs in) {
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] /= (*in[1])[i];
        return y;
      },
      [](typename Tape<T>::Inputs in, const Tensor<T>& y, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (gin[0]) {
          auto& da = *gin[0];
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / (*in[1])[i];
        }
        if (gin[1]) {
          auto& db = *gin[1];
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i] * y[i] / (*in[1])[i];
        }
      });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  return unary<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary<T>(
      "softplus", x, [](T v) { return stable_softplus(v); },
      [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Var<T> clamp_max(Var<T> x, T ceiling) {
  return unary<T>(
      "clamp_max", x, [ceiling](T v) { return std::min(v, ceiling); },
      [ceiling](T v, T) { return v <= ceiling ? T(1) : T(0); });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  split_axis(x.shape(), axis);
  return x.tape().record(
      "softmax", {x}, [axis](typename Tape<T>::Inputs in) { return msam::softmax(*in[0], axis); },
      [axis](typename Tape<T>::Inputs, const Tensor<T>& y, const Tensor<T>& g,
             typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dx = *gin[0];
        const auto [outer, len, inner] = split_axis(y.shape(), axis);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t at = base + i * inner;
              dx[at] += y[at] * (g[at] - dot);
            }
          }
        }
      });
}

template <typename T>
Var<T> log_softmax(Var<T> x, std::size_t axis) {
  split_axis(x.shape(), axis);
  return x.tape().record(
      "log_softmax", {x},
      [axis](typename Tape<T>::Inputs in) { return msam::log_softmax(*in[0], axis); },
      [axis](typename Tape<T>::Inputs, const Tensor<T>& y, const Tensor<T>& g,
             typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dx = *gin[0];
        const auto [outer, len, inner] = split_axis(y.shape(), axis);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T gsum = 0;
            for (std::size_t i = 0; i < len; ++i) gsum += g[base + i * inner];
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t at = base + i * inner;
              dx[at] += g[at] - std::exp(y[at]) * gsum;
            }
          }
        }
      });
}

template <typename T>
Var<T> l2_normalize(Var<T> x, std::size_t axis, T eps) {
  split_axis(x.shape(), axis);
  return x.tape().record(
      "l2_normalize", {x},
      [axis, eps](typename Tape<T>::Inputs in) { return msam::l2_normalize(*in[0], axis, eps); },
      [axis, eps](typename Tape<T>::Inputs in, const Tensor<T>& y, const Tensor<T>& g,
                  typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dx = *gin[0];
        const auto& x = *in[0];
        const auto [outer, len, inner] = split_axis(y.shape(), axis);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T sq = 0;
            for (std::size_t i = 0; i < len; ++i) sq += x[base + i * inner] * x[base + i * inner];
            const T norm = std::sqrt(sq);
            if (norm > eps) {
              T dot = 0;
              for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
              for (std::size_t i = 0; i < len; ++i) {
                const std::size_t at = base + i * inner;
                dx[at] += (g[at] - y[at] * dot) / norm;
              }
            } else {
              for (std::size_t i = 0; i < len; ++i) dx[base + i * inner] += g[base + i * inner] / eps;
            }
          }
        }
      });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  return x.tape().record(
      "layer_norm", {x, gamma, beta},
      [eps](typename Tape<T>::Inputs in) { return msam::layer_norm(*in[0], *in[1], *in[2], eps); },
      [eps](typename Tape<T>::Inputs in, const Tensor<T>&, const Tensor<T>& g,
            typename Tape<T>::GradInputs gin) {
        const auto& xv = *in[0];
        const auto& gam = *in[1];
        const std::size_t d = xv.shape().back();
        const std::size_t rows = xv.size() / d;
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * d;
          T mu = 0;
          for (std::size_t i = 0; i < d; ++i) mu += xv[base + i];
          mu /= T(d);
          T var = 0;
          for (std::size_t i = 0; i < d; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
          var /= T(d);
          const T inv_std = T(1) / std::sqrt(var + eps);
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (xv[base + i] - mu) * inv_std;
            dxhat[i] = g[base + i] * gam[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
          }
          mean_dxhat /= T(d);
          mean_dxhat_xhat /= T(d);
          if (gin[0]) {
            auto& dx = *gin[0];
            for (std::size_t i = 0; i < d; ++i) {
              dx[base + i] += inv_std * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            }
          }
          if (gin[1]) {
            for (std::size_t i = 0; i < d; ++i) (*gin[1])[i] += g[base + i] * xhat[i];
          }
          if (gin[2]) {
            for (std::size_t i = 0; i < d; ++i) (*gin[2])[i] += g[base + i];
          }
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  return x.tape().record(
      "sum", {x},
      [](typename Tape<T>::Inputs in) {
        T s = 0;
        for (auto v : in[0]->data()) s += v;
        return Tensor<T>::scalar(s);
      },
      [](typename Tape<T>::Inputs, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        for (auto& v : gin[0]->data()) v += g[0];
      });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

template <typename T>
Var<T> sum_axis(Var<T> x, std::size_t axis) {
  split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return x.tape().record(
      "sum_axis", {x},
      [axis, out_shape](typename Tape<T>::Inputs in) {
        const auto [outer, len, inner] = split_axis(in[0]->shape(), axis);
        Tensor<T> y(out_shape);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < inner; ++j)
              y[o * inner + j] += (*in[0])[(o * len + i) * inner + j];
        return y;
      },
      [axis](typename Tape<T>::Inputs in, const Tensor<T>&, const Tensor<T>& g,
             typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        const auto [outer, len, inner] = split_axis(in[0]->shape(), axis);
        auto& dx = *gin[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < inner; ++j) dx[(o * len + i) * inner + j] += g[o * inner + j];
      });
}

template <typename T>
Var<T> diagonal(Var<T> x) {
  if (x.shape().size() != 2 || x.shape()[0] != x.shape()[1]) {
    throw ShapeError("diagonal needs a square matrix, got " + to_string(x.shape()));
  }
  return x.tape().record(
      "diagonal", {x},
      [](typename Tape<T>::Inputs in) {
        const std::size_t n = in[0]->dim(0);
        Tensor<T> y(Shape{n});
        for (std::size_t i = 0; i < n; ++i) y[i] = (*in[0])[i * n + i];
        return y;
      },
      [](typename Tape<T>::Inputs in, const Tensor<T>&, const Tensor<T>& g,
         typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        const std::size_t n = in[0]->dim(0);
        for (std::size_t i = 0; i < n; ++i) (*gin[0])[i * n + i] += g[i];
      });
}

template <typename T>
Var<T> frobenius_distance_to_identity(Var<T> g) {
  const auto& s = g.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw ShapeError("frobenius_distance_to_identity needs [... x k x k], got " + to_string(s));
  }
  const std::size_t k = s.back();
  const Shape out_shape(s.begin(), s.end() - 2);
  auto distances = [k](const Tensor<T>& gm, std::size_t b) {
    T sq = 0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const T d = gm[b * k * k + i * k + j] - (i == j ? T(1) : T(0));
        sq += d * d;
      }
    return std::sqrt(sq);
  };
  return g.tape().record(
      "frobenius_distance_to_identity", {g},
      [out_shape, distances](typename Tape<T>::Inputs in) {
        Tensor<T> y(out_shape);
        for (std::size_t b = 0; b < y.size(); ++b) y[b] = distances(*in[0], b);
        return y;
      },
      [k](typename Tape<T>::Inputs in, const Tensor<T>& y, const Tensor<T>& gout,
          typename Tape<T>::GradInputs gin) {
        if (!gin[0]) return;
        auto& dg = *gin[0];
        const auto& gm = *in[0];
        for (std::size_t b = 0; b < y.size(); ++b) {
          if (y[b] == T(0)) continue;
          const T coef = gout[b] / y[b];
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t at = b * k * k + i * k + j;
              dg[at] += coef * (gm[at] - (i == j ? T(1) : T(0)));
            }
        }
      });
}

}  // namespace ad

#define MSAM_INSTANTIATE(T)                                                \
  template class Tape<T>;                                                  \
  template Var<T> ad::matmul(Var<T>, Var<T>);                              \
  template Var<T> ad::transpose(Var<T>);                                   \
  template Var<T> ad::reshape(Var<T>, Shape);                              \
  template Var<T> ad::broadcast_to(Var<T>, Shape);                         \
  template Var<T> ad::add(Var<T>, Var<T>);                                 \
  template Var<T> ad::sub(Var<T>, Var<T>);                                 \
  template Var<T> ad::mul(Var<T>, Var<T>);                                 \
  template Var<T> ad::div(Var<T>, Var<T>);                                 \
  template Var<T> ad::scale(Var<T>, T);                                    \
  template Var<T> ad::add_scalar(Var<T>, T);                               \
  template Var<T> ad::exp(Var<T>);                                         \
  template Var<T> ad::log(Var<T>);                                         \
  template Var<T> ad::sqrt(Var<T>);                                        \
  template Var<T> ad::square(Var<T>);                                      \
  template Var<T> ad::sigmoid(Var<T>);                                     \
  template Var<T> ad::softplus(Var<T>);                                    \
  template Var<T> ad::clamp_max(Var<T>, T);                                \
  template Var<T> ad::softmax(Var<T>, std::size_t);                        \
  template Var<T> ad::log_softmax(Var<T>, std::size_t);                    \
  template Var<T> ad::l2_normalize(Var<T>, std::size_t, T);                \
  template Var<T> ad::layer_norm(Var<T>, Var<T>, Var<T>, T);               \
  template Var<T> ad::sum(Var<T>);                                         \
  template Var<T> ad::mean(Var<T>);                                        \
  template Var<T> ad::sum_axis(Var<T>, std::size_t);                       \
  template Var<T> ad::diagonal(Var<T>);                                    \
  template Var<T> ad::frobenius_distance_to_identity(Var<T>);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
