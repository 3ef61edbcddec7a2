#include "msam/ciffp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "msam/parallel.hpp"

namespace msam {
namespace {

template <typename T>
void check_inputs(const char* op, const Tensor<T>& frames, const Tensor<T>& texts) {
  if (frames.rank() != 3 || texts.rank() != 2 || frames.dim(2) != texts.dim(1)) {
    throw ShapeError(std::string(op) + ": frames " + to_string(frames.shape()) + " and texts " +
                     to_string(texts.shape()) + " must be [B x F x D] and [T x D]");
  }
  if (!all_finite(frames) || !all_finite(texts)) {
    throw ValidationError(std::string(op) + ": non-finite input embedding");
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Sum that depends only on the multiset of terms, so reordering the text
// axis leaves every text-axis reduction bit-identical.
template <typename T>
T sorted_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end());
  T s = 0;
  for (T x : terms) s += x;
  return s;
}

// Output slots for one video.
template <typename T>
struct VideoSlots {
  std::span<T> s_v2t;  // [F x T]
  std::span<T> n_v2v;  // [T x D]
  std::span<T> s_t2v;  // [T]
  std::span<T> n_t2v;  // [D]
  std::span<T> s_v;    // [T]
  std::span<T> n_vv;   // [T x D]
  std::span<T> s_vt;   // [T]
};

template <typename T>
void ciffp_video(const T* frames, const T* texts, std::size_t f_count, std::size_t t_count,
                 std::size_t d, const CiffpParams<T>& params, const VideoSlots<T>& out) {
  // Frame attention per text, softmax over the frame axis.
  for (std::size_t f = 0; f < f_count; ++f)
    for (std::size_t t = 0; t < t_count; ++t)
      out.s_v2t[f * t_count + t] = dot(frames + f * d, texts + t * d, d);
  for (std::size_t t = 0; t < t_count; ++t) {
    T mx = out.s_v2t[t];
    for (std::size_t f = 1; f < f_count; ++f) mx = std::max(mx, out.s_v2t[f * t_count + t]);
    T sum = 0;
    for (std::size_t f = 0; f < f_count; ++f) {
      T& w = out.s_v2t[f * t_count + t];
      w = std::exp(w - mx);
      sum += w;
    }
    for (std::size_t f = 0; f < f_count; ++f) out.s_v2t[f * t_count + t] /= sum;
  }

  std::fill(out.n_v2v.begin(), out.n_v2v.end(), T(0));
  for (std::size_t t = 0; t < t_count; ++t) {
    T* row = out.n_v2v.data() + t * d;
    for (std::size_t f = 0; f < f_count; ++f) {
      const T w = out.s_v2t[f * t_count + t];
      const T* fr = frames + f * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += w * fr[i];
    }
  }

  // Text attention for this video, softmax over the text axis.
  T mx = 0;
  for (std::size_t t = 0; t < t_count; ++t) {
    out.s_t2v[t] = dot(out.n_v2v.data() + t * d, texts + t * d, d);
    mx = t == 0 ? out.s_t2v[t] : std::max(mx, out.s_t2v[t]);
  }
  std::vector<T> terms(t_count);
  for (std::size_t t = 0; t < t_count; ++t) terms[t] = out.s_t2v[t] = std::exp(out.s_t2v[t] - mx);
  const T sum = sorted_sum(terms);
  for (std::size_t t = 0; t < t_count; ++t) out.s_t2v[t] /= sum;

  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) terms[t] = out.s_t2v[t] * out.n_v2v[t * d + i];
    out.n_t2v[i] = sorted_sum(terms);
  }

  const T* gw = params.gate_weight.data().data();
  const T gb = params.gate_bias[0];
  for (std::size_t t = 0; t < t_count; ++t) {
    const T* pooled = out.n_v2v.data() + t * d;
    const T gate = stable_sigmoid(dot(gw, pooled, d) + gb);
    out.s_v[t] = gate;
    T* fused = out.n_vv.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      fused[i] = pooled[i] + (gate * pooled[i] + (T(1) - gate) * out.n_t2v[i]);
    }
    out.s_vt[t] = dot(fused, texts + t * d, d);
  }
}

template <typename T>
void check_params(const CiffpParams<T>& params, std::size_t d) {
  if (params.gate_weight.shape() != Shape{d} || params.gate_bias.size() != 1) {
    throw ShapeError("ciffp gate must be [" + std::to_string(d) + "] + bias, got " +
                     to_string(params.gate_weight.shape()));
  }
}

}  // namespace

template <typename T>
CiffpTrace<T> ciffp_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                               const CiffpParams<T>& params) {
  check_inputs("ciffp_similarity", frames, text_pooled);
  const std::size_t b_count = frames.dim(0), f_count = frames.dim(1), d = frames.dim(2);
  const std::size_t t_count = text_pooled.dim(0);
  check_params(params, d);

  const Tensor<T> fn = l2_normalize(frames, 2);
  const Tensor<T> tn = l2_normalize(text_pooled, 1);
  CiffpTrace<T> tr{
      Tensor<T>(Shape{b_count, f_count, t_count}), Tensor<T>(Shape{b_count, t_count, d}),
      Tensor<T>(Shape{b_count, t_count, 1}),       Tensor<T>(Shape{b_count, d}),
      Tensor<T>(Shape{b_count, t_count, 1}),       Tensor<T>(Shape{b_count, t_count, d}),
      Tensor<T>(Shape{b_count, t_count}),
  };
  parallel_for(b_count, [&](std::size_t b) {
    VideoSlots<T> slots{
        tr.s_v2t.data().subspan(b * f_count * t_count, f_count * t_count),
        tr.n_v2v.data().subspan(b * t_count * d, t_count * d),
        tr.s_t2v.data().subspan(b * t_count, t_count),
        tr.n_t2v.data().subspan(b * d, d),
        tr.s_v.data().subspan(b * t_count, t_count),
        tr.n_vv.data().subspan(b * t_count * d, t_count * d),
        tr.s_vt.data().subspan(b * t_count, t_count),
    };
    ciffp_video(fn.data().data() + b * f_count * d, tn.data().data(), f_count, t_count, d, params,
                slots);
  });
  return tr;
}

template <typename T>
Tensor<T> ciffp_scores(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                       const CiffpParams<T>& params) {
  check_inputs("ciffp_scores", frames, text_pooled);
  const std::size_t b_count = frames.dim(0), f_count = frames.dim(1), d = frames.dim(2);
  const std::size_t t_count = text_pooled.dim(0);
  check_params(params, d);

  const Tensor<T> fn = l2_normalize(frames, 2);
  const Tensor<T> tn = l2_normalize(text_pooled, 1);
  const T* texts = tn.data().data();
  const T* gw = params.gate_weight.data().data();
  const T gb = params.gate_bias[0];
  Tensor<T> s_vt(Shape{b_count, t_count});
  parallel_for(b_count, [&](std::size_t b) {
    const T* fr = fn.data().data() + b * f_count * d;
    std::vector<T> s_v2t(f_count * t_count), direct(t_count), gate(t_count), n_row(d), n_t2v(d);
    // Pass 1, per text: frame softmax, the pooled row, its text score and
    // its gate. Only the F x T weights are kept.
    for (std::size_t t = 0; t < t_count; ++t) {
      const T* text = texts + t * d;
      T* w = s_v2t.data() + t * f_count;
      for (std::size_t f = 0; f < f_count; ++f) w[f] = dot(fr + f * d, text, d);
      const T mx = *std::max_element(w, w + f_count);
      T sum = 0;
      for (std::size_t f = 0; f < f_count; ++f) sum += (w[f] = std::exp(w[f] - mx));
      std::fill(n_row.begin(), n_row.end(), T(0));
      for (std::size_t f = 0; f < f_count; ++f) {
        w[f] /= sum;
        for (std::size_t i = 0; i < d; ++i) n_row[i] += w[f] * fr[f * d + i];
      }
      direct[t] = dot(n_row.data(), text, d);
      gate[t] = stable_sigmoid(dot(gw, n_row.data(), d) + gb);
    }
    // Text softmax; n_t2v = sum_t s_t2v[t] n_v2v[t] folded onto the frames.
    const T mx = *std::max_element(direct.begin(), direct.end());
    std::vector<T> s_t2v(t_count), terms(t_count);
    for (std::size_t t = 0; t < t_count; ++t) terms[t] = s_t2v[t] = std::exp(direct[t] - mx);
    const T sum = sorted_sum(terms);
    std::fill(n_t2v.begin(), n_t2v.end(), T(0));
    for (std::size_t f = 0; f < f_count; ++f) {
      for (std::size_t t = 0; t < t_count; ++t) terms[t] = s_t2v[t] / sum * s_v2t[t * f_count + f];
      const T wf = sorted_sum(terms);
      for (std::size_t i = 0; i < d; ++i) n_t2v[i] += wf * fr[f * d + i];
    }
    // Pass 2: <n_vv, text> = (1 + s_v) <n_v2v, text> + (1 - s_v) <n_t2v, text>.
    T* out = s_vt.data().data() + b * t_count;
    for (std::size_t t = 0; t < t_count; ++t) {
      out[t] = (T(1) + gate[t]) * direct[t] + (T(1) - gate[t]) * dot(n_t2v.data(), texts + t * d, d);
    }
  });
  return s_vt;
}

template <typename T>
CiffpVars<T> bind_params(Tape<T>& tape, const CiffpParams<T>& params, const std::string& prefix,
                         bool trainable) {
  auto leaf = [&](const char* name, const Tensor<T>& value) {
    return trainable ? tape.parameter(prefix + name, value) : tape.constant(value);
  };
  return {leaf("gate_weight", params.gate_weight), leaf("gate_bias", params.gate_bias)};
}

template <typename T>
Var<T> ciffp_similarity(Var<T> frames, Var<T> text_pooled, const CiffpVars<T>& params) {
  check_inputs("ciffp_similarity", frames.value(), text_pooled.value());
  const std::size_t b_count = frames.shape()[0], d = frames.shape()[2];
  const std::size_t t_count = text_pooled.shape()[0];
  if (params.gate_weight.shape() != Shape{d} || params.gate_bias.value().size() != 1) {
    throw ShapeError("ciffp gate does not match D = " + std::to_string(d));
  }

  const Var<T> fn = ad::l2_normalize(frames, 2);
  const Var<T> tn = ad::l2_normalize(text_pooled, 1);
  const Var<T> tn_cols = ad::broadcast_to(ad::transpose(tn), {b_count, d, t_count});
  const Var<T> tn_rows = ad::broadcast_to(tn, {b_count, t_count, d});

  const Var<T> s_v2t = ad::softmax(ad::matmul(fn, tn_cols), 1);             // [B,F,T]
  const Var<T> n_v2v = ad::matmul(ad::transpose(s_v2t), fn);                // [B,T,D]
  const Var<T> s_t2v = ad::softmax(ad::sum_axis(n_v2v * tn_rows, 2), 1);    // [B,T]
  const Var<T> n_t2v = ad::matmul(ad::reshape(s_t2v, {b_count, 1, t_count}), n_v2v);  // [B,1,D]
  const Var<T> n_t2v_rows = ad::broadcast_to(n_t2v, {b_count, t_count, d});

  const Var<T> gate_logit =
      ad::matmul(ad::reshape(n_v2v, {b_count * t_count, d}), ad::reshape(params.gate_weight, {d, 1})) +
      ad::broadcast_to(params.gate_bias, {b_count * t_count, 1});
  const Var<T> s_v =
      ad::broadcast_to(ad::reshape(ad::sigmoid(gate_logit), {b_count, t_count, 1}), {b_count, t_count, d});
  const Var<T> blend = s_v * n_v2v + ad::add_scalar(-s_v, T(1)) * n_t2v_rows;
  const Var<T> n_vv = n_v2v + blend;
  return ad::sum_axis(n_vv * tn_rows, 2);
}

template <typename T>
Tensor<T> mean_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled) {
  check_inputs("mean_pool_similarity", frames, text_pooled);
  const std::size_t b_count = frames.dim(0), f_count = frames.dim(1), d = frames.dim(2);
  Tensor<T> pooled(Shape{b_count, d});
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t f = 0; f < f_count; ++f)
      for (std::size_t i = 0; i < d; ++i) pooled[b * d + i] += frames[(b * f_count + f) * d + i];
  for (auto& v : pooled.data()) v /= T(f_count);
  return matmul(l2_normalize(pooled, 1), transpose(l2_normalize(text_pooled, 1)));
}

template <typename T>
Tensor<T> topk_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                               std::size_t k_frames) {
  check_inputs("topk_pool_similarity", frames, text_pooled);
  const std::size_t b_count = frames.dim(0), f_count = frames.dim(1), d = frames.dim(2);
  const std::size_t t_count = text_pooled.dim(0);
  if (k_frames < 1 || k_frames > f_count) {
    throw ContractError("topk_pool_similarity: k_frames must lie in [1, " + std::to_string(f_count) +
                        "], got " + std::to_string(k_frames));
  }
  const Tensor<T> fn = l2_normalize(frames, 2);
  const Tensor<T> tn = l2_normalize(text_pooled, 1);
  Tensor<T> out(Shape{b_count, t_count});
  std::vector<T> cos(f_count);
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t t = 0; t < t_count; ++t) {
      for (std::size_t f = 0; f < f_count; ++f) {
        cos[f] = dot(fn.data().data() + (b * f_count + f) * d, tn.data().data() + t * d, d);
      }
      std::partial_sort(cos.begin(), cos.begin() + static_cast<std::ptrdiff_t>(k_frames), cos.end(),
                        std::greater<T>());
      T s = 0;
      for (std::size_t i = 0; i < k_frames; ++i) s += cos[i];
      out[b * t_count + t] = s / T(k_frames);
    }
  }
  return out;
}

template <typename T>
Tensor<T> self_attention_pool_similarity(const Tensor<T>& frames, const Tensor<T>& text_pooled,
                                         const Tensor<T>& projection) {
  check_inputs("self_attention_pool_similarity", frames, text_pooled);
  const std::size_t b_count = frames.dim(0), f_count = frames.dim(1), d = frames.dim(2);
  if (projection.shape() != Shape{d}) {
    throw ShapeError("self-attention projection must be [" + std::to_string(d) + "], got " +
                     to_string(projection.shape()));
  }
  Tensor<T> logits(Shape{b_count, f_count});
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t f = 0; f < f_count; ++f)
      logits[b * f_count + f] = dot(frames.data().data() + (b * f_count + f) * d, projection.data().data(), d);
  const Tensor<T> weights = softmax(logits, 1);
  Tensor<T> pooled(Shape{b_count, d});
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t f = 0; f < f_count; ++f)
      for (std::size_t i = 0; i < d; ++i)
        pooled[b * d + i] += weights[b * f_count + f] * frames[(b * f_count + f) * d + i];
  return matmul(l2_normalize(pooled, 1), transpose(l2_normalize(text_pooled, 1)));
}

#define MSAM_INSTANTIATE(T)                                                                        \
  template CiffpTrace<T> ciffp_similarity(const Tensor<T>&, const Tensor<T>&, const CiffpParams<T>&); \
  template Tensor<T> ciffp_scores(const Tensor<T>&, const Tensor<T>&, const CiffpParams<T>&);      \
  template CiffpVars<T> bind_params(Tape<T>&, const CiffpParams<T>&, const std::string&, bool);     \
  template Var<T> ciffp_similarity(Var<T>, Var<T>, const CiffpVars<T>&);                           \
  template Tensor<T> mean_pool_similarity(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> topk_pool_similarity(const Tensor<T>&, const Tensor<T>&, std::size_t);        \
  template Tensor<T> self_attention_pool_similarity(const Tensor<T>&, const Tensor<T>&,            \
                                                    const Tensor<T>&);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
