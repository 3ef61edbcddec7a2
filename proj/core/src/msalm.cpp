#include "msam/msalm.hpp"

#include <cmath>

namespace msam {
namespace {

template <typename T>
Tensor<T> identity(std::size_t d) {
  Tensor<T> m(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = T(1);
  return m;
}

// x [N x S x D] -> x W + b applied to every row, result [N x S x D].
template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T>* bias) {
  const Shape shape = x.shape();
  const std::size_t d_in = shape.back();
  const std::size_t rows = x.value().size() / d_in;
  Var<T> y = ad::matmul(ad::reshape(x, {rows, d_in}), weight);
  const std::size_t d_out = y.shape()[1];
  if (bias) y = y + ad::broadcast_to(*bias, {rows, d_out});
  Shape out_shape = shape;
  out_shape.back() = d_out;
  return ad::reshape(y, out_shape);
}

}  // namespace

template <typename T>
MsalmParams<T> MsalmParams<T>::init(std::size_t dim, std::size_t k, Rng& rng, T sigma_floor) {
  if (dim == 0 || k == 0) throw ContractError("MsalmParams::init needs dim >= 1 and k >= 1");
  MsalmParams p;
  p.queries = Tensor<T>(Shape{k, dim});
  const double scale = 1.0 / std::sqrt(double(dim));
  for (auto& q : p.queries.data()) q = T(rng.normal() * scale);
  p.attn_proj_key = identity<T>(dim);
  p.attn_proj_value = identity<T>(dim);
  p.ln_gamma = Tensor<T>(Shape{dim}, T(1));
  p.ln_beta = Tensor<T>(Shape{dim});
  p.ff_weight = identity<T>(dim);
  p.ff_bias = Tensor<T>(Shape{dim});
  p.mu_weight = identity<T>(dim);
  p.mu_bias = Tensor<T>(Shape{dim});
  p.sigma_weight = identity<T>(dim);
  p.sigma_bias = Tensor<T>(Shape{dim});
  p.k = k;
  p.sigma_floor = sigma_floor;
  return p;
}

template <typename T>
void MsalmParams<T>::validate() const {
  if (k < 1) throw ContractError("msalm: k must be >= 1");
  if (!(sigma_floor > T(0))) throw ContractError("msalm: sigma_floor must be positive");
  const std::size_t d = dim();
  const Shape vec{d}, mat{d, d};
  auto expect = [](const Tensor<T>& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ShapeError(std::string("msalm: ") + name + " must be " + to_string(s) + ", got " +
                       to_string(t.shape()));
    }
    if (!all_finite(t)) throw ValidationError(std::string("msalm: ") + name + " is not finite");
  };
  expect(queries, Shape{k, d}, "queries");
  expect(attn_proj_key, mat, "attn_proj_key");
  expect(attn_proj_value, mat, "attn_proj_value");
  expect(ln_gamma, vec, "ln_gamma");
  expect(ln_beta, vec, "ln_beta");
  expect(ff_weight, mat, "ff_weight");
  expect(ff_bias, vec, "ff_bias");
  expect(mu_weight, mat, "mu_weight");
  expect(mu_bias, vec, "mu_bias");
  expect(sigma_weight, mat, "sigma_weight");
  expect(sigma_bias, vec, "sigma_bias");
}

template <typename T>
MsalmVars<T> bind_params(Tape<T>& tape, const MsalmParams<T>& params, const std::string& prefix,
                         bool trainable) {
  params.validate();
  auto leaf = [&](const char* name, const Tensor<T>& value) {
    return trainable ? tape.parameter(prefix + name, value) : tape.constant(value);
  };
  MsalmVars<T> v;
  v.queries = leaf("queries", params.queries);
  v.attn_proj_key = leaf("attn_proj_key", params.attn_proj_key);
  v.attn_proj_value = leaf("attn_proj_value", params.attn_proj_value);
  v.ln_gamma = leaf("ln_gamma", params.ln_gamma);
  v.ln_beta = leaf("ln_beta", params.ln_beta);
  v.ff_weight = leaf("ff_weight", params.ff_weight);
  v.ff_bias = leaf("ff_bias", params.ff_bias);
  v.mu_weight = leaf("mu_weight", params.mu_weight);
  v.mu_bias = leaf("mu_bias", params.mu_bias);
  v.sigma_weight = leaf("sigma_weight", params.sigma_weight);
  v.sigma_bias = leaf("sigma_bias", params.sigma_bias);
  v.k = params.k;
  v.sigma_floor = params.sigma_floor;
  return v;
}

template <typename T>
Var<T> attention_pool_k(Var<T> sequence, const MsalmVars<T>& params) {
  const Shape& s = sequence.shape();
  const std::size_t d = params.ln_gamma.shape()[0];
  if (s.size() != 3 || s[2] != d) {
    throw ShapeError("attention_pool_k: sequence must be [N x S x " + std::to_string(d) + "], got " +
                     to_string(s));
  }
  const std::size_t n = s[0];
  const Var<T> keys = dense<T>(sequence, params.attn_proj_key, nullptr);
  const Var<T> values = dense<T>(sequence, params.attn_proj_value, nullptr);
  const Var<T> queries = ad::broadcast_to(params.queries, {n, params.k, d});
  const Var<T> scores =
      ad::scale(ad::matmul(queries, ad::transpose(keys)), T(1) / std::sqrt(T(d)));  // [N,k,S]
  return ad::matmul(ad::softmax(scores, 2), values);                                // [N,k,D]
}

template <typename T>
ProbVars<T> adaptive_semantic_construction(Var<T> sequence, Var<T> pooled, const MsalmVars<T>& params) {
  const std::size_t d = params.ln_gamma.shape()[0];
  if (pooled.shape().size() != 2 || pooled.shape()[1] != d || sequence.shape().size() != 3 ||
      sequence.shape()[0] != pooled.shape()[0]) {
    throw ShapeError("adaptive_semantic_construction: sequence " + to_string(sequence.shape()) +
                     " and pooled " + to_string(pooled.shape()) + " are inconsistent");
  }
  if (!all_finite(sequence.value()) || !all_finite(pooled.value())) {
    throw ValidationError("adaptive_semantic_construction: non-finite input");
  }
  const std::size_t n = pooled.shape()[0];
  const Shape nkd{n, params.k, d};

  const Var<T> gate = ad::sigmoid(attention_pool_k(sequence, params));
  const Var<T> h = ad::broadcast_to(ad::reshape(pooled, {n, 1, d}), nkd) * gate;
  Var<T> ff_bias = params.ff_bias, mu_bias = params.mu_bias, sigma_bias = params.sigma_bias;
  const Var<T> p = dense(ad::layer_norm(h, params.ln_gamma, params.ln_beta), params.ff_weight, &ff_bias);
  const Var<T> mu = dense(p, params.mu_weight, &mu_bias);
  const Var<T> sigma =
      ad::add_scalar(ad::softplus(dense(p, params.sigma_weight, &sigma_bias)), params.sigma_floor);
  return {mu, sigma};
}

template <typename T>
Tensor<T> attention_pool_k(const Tensor<T>& sequence, const MsalmParams<T>& params) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, "", false);
  return attention_pool_k(tape.constant(sequence), vars).value();
}

template <typename T>
ProbEmbedding<T> adaptive_semantic_construction(const Tensor<T>& sequence, const Tensor<T>& pooled,
                                                const MsalmParams<T>& params) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, "", false);
  const auto out = adaptive_semantic_construction(tape.constant(sequence), tape.constant(pooled), vars);
  return {out.mu.value(), out.sigma.value()};
}

#define MSAM_INSTANTIATE(T)                                                                          \
  template struct MsalmParams<T>;                                                                    \
  template MsalmVars<T> bind_params(Tape<T>&, const MsalmParams<T>&, const std::string&, bool);      \
  template Var<T> attention_pool_k(Var<T>, const MsalmVars<T>&);                                     \
  template ProbVars<T> adaptive_semantic_construction(Var<T>, Var<T>, const MsalmVars<T>&);          \
  template Tensor<T> attention_pool_k(const Tensor<T>&, const MsalmParams<T>&);                      \
  template ProbEmbedding<T> adaptive_semantic_construction(const Tensor<T>&, const Tensor<T>&,       \
                                                           const MsalmParams<T>&);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
