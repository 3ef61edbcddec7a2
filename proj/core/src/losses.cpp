#include "msam/losses.hpp"

#include <string>
#include <utility>

namespace msam {
namespace {

template <typename T>
void check_pair(const ProbVars<T>& text, const ProbVars<T>& video, const char* who) {
  const Shape& s = text.mu.shape();
  if (s.size() != 3 || text.sigma.shape() != s || video.mu.shape() != s || video.sigma.shape() != s) {
    throw ContractError(std::string(who) + ": text mu " + to_string(s) + ", text sigma " +
                        to_string(text.sigma.shape()) + ", video mu " + to_string(video.mu.shape()) +
                        ", video sigma " + to_string(video.sigma.shape()) +
                        " must all be the same [N x k x D]");
  }
}

template <typename T>
void check_sigma(const Tensor<T>& sigma, const char* who, const char* side) {
  for (const T v : sigma.data()) {
    if (!(v > T(0))) {
      throw ContractError(std::string(who) + ": " + side + " sigma must be positive, found " +
                          std::to_string(double(v)));
    }
  }
}

template <typename T>
Var<T> dst_term(const ProbVars<T>& p) {
  const Var<T> f = p.mu / p.sigma;
  return ad::mean(ad::frobenius_distance_to_identity(ad::matmul(f, ad::transpose(f))));
}

}  // namespace

template <typename T>
Var<T> vtm_loss(Var<T> s_vt, Var<T> log_tau_inv) {
  const Shape& s = s_vt.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw ContractError("vtm_loss: similarity must be square, got " + to_string(s));
  }
  if (log_tau_inv.value().size() != 1) {
    throw ContractError("vtm_loss: log_tau_inv must hold one value, got " +
                        to_string(log_tau_inv.shape()));
  }
  const Var<T> scale = ad::exp(ad::clamp_max(log_tau_inv, T(std::log(kMaxLogitScale))));
  const Var<T> logits = s_vt * ad::broadcast_to(ad::reshape(scale, {1, 1}), s);
  const Var<T> v2t = ad::mean(ad::diagonal(ad::log_softmax(logits, 1)));
  const Var<T> t2v = ad::mean(ad::diagonal(ad::log_softmax(ad::transpose(logits), 1)));
  return -(v2t + t2v);
}

template <typename T>
Var<T> ddsl_loss(const ProbVars<T>& text, const ProbVars<T>& video) {
  check_pair(text, video, "ddsl_loss");
  check_sigma(text.sigma.value(), "ddsl_loss", "text");
  check_sigma(video.sigma.value(), "ddsl_loss", "video");
  const Var<T> term = ad::log(text.sigma / video.sigma) +
                      ad::square(video.sigma / text.sigma) +
                      ad::square(text.mu - video.mu) / ad::square(text.sigma);
  return ad::add_scalar(ad::mean(term), T(-1));
}

template <typename T>
Var<T> dst_loss(const ProbVars<T>& text, const ProbVars<T>& video) {
  check_pair(text, video, "dst_loss");
  check_sigma(text.sigma.value(), "dst_loss", "text");
  check_sigma(video.sigma.value(), "dst_loss", "video");
  return dst_term(text) + dst_term(video);
}

template <typename T>
Var<T> total_loss(Var<T> l_vtm, Var<T> l_ddsl, Var<T> l_dst, T lambda) {
  if (!(lambda >= T(0))) throw ContractError("total_loss: lambda must be >= 0");
  return (l_vtm + l_ddsl) + ad::scale(l_dst, lambda);
}

template <typename T>
T vtm_loss(const Tensor<T>& s_vt, const LogitScale<T>& scale) {
  Tape<T> tape;
  return vtm_loss(tape.constant(s_vt), tape.constant(scale.log_tau_inv)).value().item();
}

template <typename T>
T ddsl_loss(const ProbEmbedding<T>& text, const ProbEmbedding<T>& video) {
  Tape<T> tape;
  const ProbVars<T> t{tape.constant(text.mu), tape.constant(text.sigma)};
  const ProbVars<T> v{tape.constant(video.mu), tape.constant(video.sigma)};
  return ddsl_loss(t, v).value().item();
}

template <typename T>
T dst_loss(const ProbEmbedding<T>& text, const ProbEmbedding<T>& video) {
  Tape<T> tape;
  const ProbVars<T> t{tape.constant(text.mu), tape.constant(text.sigma)};
  const ProbVars<T> v{tape.constant(video.mu), tape.constant(video.sigma)};
  return dst_loss(t, v).value().item();
}

template <typename T>
LossBreakdown<T> total_loss(T l_vtm, T l_ddsl, T l_dst, T lambda) {
  const std::pair<const char*, T> parts[] = {
      {"l_vtm", l_vtm}, {"l_ddsl", l_ddsl}, {"l_dst", l_dst}, {"lambda", lambda}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw ContractError(std::string("total_loss: ") + name + " is not finite (" +
                          std::to_string(double(v)) + ")");
    }
  }
  if (lambda < T(0)) throw ContractError("total_loss: lambda must be >= 0");
  return {l_vtm, l_ddsl, l_dst, lambda, (l_vtm + l_ddsl) + lambda * l_dst};
}

#define MSAM_INSTANTIATE(T)                                                            \
  template Var<T> vtm_loss(Var<T>, Var<T>);                                            \
  template Var<T> ddsl_loss(const ProbVars<T>&, const ProbVars<T>&);                   \
  template Var<T> dst_loss(const ProbVars<T>&, const ProbVars<T>&);                    \
  template Var<T> total_loss(Var<T>, Var<T>, Var<T>, T);                               \
  template T vtm_loss(const Tensor<T>&, const LogitScale<T>&);                         \
  template T ddsl_loss(const ProbEmbedding<T>&, const ProbEmbedding<T>&);              \
  template T dst_loss(const ProbEmbedding<T>&, const ProbEmbedding<T>&);               \
  template LossBreakdown<T> total_loss(T, T, T, T);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
