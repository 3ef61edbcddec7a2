#pragma once

#include <cstddef>
#include <string>

#include "msam/autodiff.hpp"
#include "msam/tensor.hpp"

namespace msam {

// The gate F_p: D -> 1 that decides how much of the frame-pooled feature
// survives the fusion with the text-pooled feature.
template <typename T>
struct CiffpParams {
  Tensor<T> gate_weight;  // [D]
  Tensor<T> gate_bias;    // [1]

  // Zero gate: sigmoid(0) = 0.5, an even blend.
  static CiffpParams zeros(std::size_t dim) {
    return {Tensor<T>(Shape{dim}), Tensor<T>(Shape{1})};
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("gate_weight", self.gate_weight, true);
    fn("gate_bias", self.gate_bias, false);
  }
};

// Every intermediate of the pooling pipeline.
template <typename T>
struct CiffpTrace {
  Tensor<T> s_v2t;  // [B x F x T] frame weights per text, softmax over F
  Tensor<T> n_v2v;  // [B x T x D] text-conditioned frame pooling
  Tensor<T> s_t2v;  // [B x T x 1] text weights per video, softmax over T
  Tensor<T> n_t2v;  // [B x D]     text-weighted video feature
  Tensor<T> s_v;    // [B x T x 1] fusion gate
  Tensor<T> n_vv;   // [B x T x D] fused video feature
  Tensor<T> s_vt;   // [B x T]     similarity
};

// Cross-modal interactive feature fusion pooling over normalized frames
// [B x F x D] and pooled texts [T x D]:
//
//   s_v2t  = softmax_F(<frame, text>)
//   n_v2v  = sum_F s_v2t * frame
//   s_t2v  = softmax_T(<n_v2v, text>)
//   n_t2v  = sum_T s_t2v * n_v2v            (replicated along T)
//   s_v    = sigmoid(F_p(n_v2v))
//   n_vv   = n_v2v + (s_v * n_v2v + (1 - s_v) * n_t2v)
//   s_vt   = <n_vv, text>
//
// Frames and texts are L2-normalized along D first; n_vv is not.
template <typename T>
CiffpTrace<T> ciffp_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                               const CiffpParams<T>& params);

// s_vt only, evaluated one video at a time in parallel. Uses
// <n_vv, t> = (1 + s_v) <n_v2v, t> + (1 - s_v) <n_t2v, t> so no [T x D]
// intermediate is formed; scratch is O(F * T + D) per worker. Agrees with
// ciffp_similarity up to rounding.
template <typename T>
Tensor<T> ciffp_scores(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                       const CiffpParams<T>& params);

template <typename T>
struct CiffpVars {
  Var<T> gate_weight;
  Var<T> gate_bias;
};

template <typename T>
CiffpVars<T> bind_params(Tape<T>& tape, const CiffpParams<T>& params, const std::string& prefix,
                         bool trainable);

// Differentiable s_vt [B x T], built from tape primitives.
template <typename T>
Var<T> ciffp_similarity(Var<T> frames, Var<T> text_pooled, const CiffpVars<T>& params);

// --- Baseline poolers (text-independent or weakly text-aware) -------------

// Cosine between the normalized frame mean and each text.
template <typename T>
Tensor<T> mean_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled);

// Mean of the k_frames largest frame-text cosines.
template <typename T>
Tensor<T> topk_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                               std::size_t k_frames);

// Frames weighted by softmax_F(<frame, projection>), pooled, normalized, and
// compared to each text by cosine.
template <typename T>
Tensor<T> self_attention_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                                         const Tensor<T>& projection);

}  // namespace msam
