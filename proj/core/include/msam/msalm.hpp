#pragma once

#include <cstddef>
#include <string>

#include "msam/autodiff.hpp"
#include "msam/random.hpp"
#include "msam/tensor.hpp"

namespace msam {

inline constexpr double kSigmaFloor = 1e-6;

// Learnable state of the adaptive semantic construction for one modality.
// Dense layers act on row vectors: y = x W + b.
template <typename T>
struct MsalmParams {
  Tensor<T> queries;          // [k x D]
  Tensor<T> attn_proj_key;    // [D x D]
  Tensor<T> attn_proj_value;  // [D x D]
  Tensor<T> ln_gamma;         // [D]
  Tensor<T> ln_beta;          // [D]
  Tensor<T> ff_weight;        // [D x D]
  Tensor<T> ff_bias;          // [D]
  Tensor<T> mu_weight;        // [D x D]
  Tensor<T> mu_bias;          // [D]
  Tensor<T> sigma_weight;     // [D x D]
  Tensor<T> sigma_bias;       // [D]
  std::size_t k = 0;
  T sigma_floor = T(kSigmaFloor);

  // Identity projections, zero biases, unit gamma, zero beta; queries are
  // N(0, 1) / sqrt(D) drawn row-major from `rng`.
  static MsalmParams init(std::size_t dim, std::size_t k, Rng& rng, T sigma_floor = T(kSigmaFloor));

  std::size_t dim() const { return ln_gamma.size(); }
  void validate() const;

  // fn(name, tensor, decays): decays is true for weight matrices.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("queries", self.queries, true);
    fn("attn_proj_key", self.attn_proj_key, true);
    fn("attn_proj_value", self.attn_proj_value, true);
    fn("ln_gamma", self.ln_gamma, false);
    fn("ln_beta", self.ln_beta, false);
    fn("ff_weight", self.ff_weight, true);
    fn("ff_bias", self.ff_bias, false);
    fn("mu_weight", self.mu_weight, true);
    fn("mu_bias", self.mu_bias, false);
    fn("sigma_weight", self.sigma_weight, true);
    fn("sigma_bias", self.sigma_bias, false);
  }
};

// k probabilistic embeddings per sample: means and strictly positive
// deviations.
template <typename T>
struct ProbEmbedding {
  Tensor<T> mu;     // [N x k x D]
  Tensor<T> sigma;  // [N x k x D]
};

template <typename T>
struct MsalmVars {
  Var<T> queries, attn_proj_key, attn_proj_value, ln_gamma, ln_beta, ff_weight, ff_bias, mu_weight,
      mu_bias, sigma_weight, sigma_bias;
  std::size_t k = 0;
  T sigma_floor = T(kSigmaFloor);
};

template <typename T>
struct ProbVars {
  Var<T> mu;
  Var<T> sigma;
};

template <typename T>
MsalmVars<T> bind_params(Tape<T>& tape, const MsalmParams<T>& params, const std::string& prefix,
                         bool trainable);

// Single-head scaled dot-product attention of the k learned queries over the
// sequence: softmax_S(Q (X Wk)^T / sqrt(D)) (X Wv). Result [N x k x D].
template <typename T>
Var<T> attention_pool_k(Var<T> sequence, const MsalmVars<T>& params);

// H = pooled * sigmoid(attention_pool_k(sequence)); P = F_f(LN(H));
// mu = F_mu(P); sigma = softplus(F_sigma(P)) + sigma_floor.
template <typename T>
ProbVars<T> adaptive_semantic_construction(Var<T> sequence, Var<T> pooled,
                                           const MsalmVars<T>& params);

// Eager wrappers (no gradients).
template <typename T>
Tensor<T> attention_pool_k(const Tensor<T>& sequence, const MsalmParams<T>& params);

template <typename T>
ProbEmbedding<T> adaptive_semantic_construction(const Tensor<T>& sequence, const Tensor<T>& pooled,
                                                const MsalmParams<T>& params);

}  // namespace msam
