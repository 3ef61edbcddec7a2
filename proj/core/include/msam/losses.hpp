#pragma once

#include <algorithm>
#include <cmath>

#include "msam/autodiff.hpp"
#include "msam/msalm.hpp"
#include "msam/tensor.hpp"

namespace msam {

inline constexpr double kMaxLogitScale = 100.0;

// Learnable inverse temperature, stored in log space. The clamp acts on the
// log value, so the initial ln(100) sits on the boundary and still receives
// a gradient.
template <typename T>
struct LogitScale {
  Tensor<T> log_tau_inv{Shape{1}, T(std::log(kMaxLogitScale))};

  T effective() const { return std::exp(std::min(log_tau_inv[0], T(std::log(kMaxLogitScale)))); }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("log_tau_inv", self.log_tau_inv, false);
  }
};

template <typename T>
struct LossBreakdown {
  T l_vtm = 0;
  T l_ddsl = 0;
  T l_dst = 0;
  T lambda = 0;
  T total = 0;
};

// Symmetric InfoNCE over a paired [N x N] similarity matrix (row i matches
// column i): -mean_i log softmax_row(s * scale)[i,i] plus the same on the
// transpose.
template <typename T>
Var<T> vtm_loss(Var<T> s_vt, Var<T> log_tau_inv);

// Mean over N, k and D of
//   log(Ts / Vs) - 1 + (Vs / Ts)^2 + (Tm - Vm)^2 / Ts^2
// with the text distribution as reference.
template <typename T>
Var<T> ddsl_loss(const ProbVars<T>& text, const ProbVars<T>& video);

// F = mu / sigma per sample; mean over N of ||F F^T - I||_F for text plus the
// same for video.
template <typename T>
Var<T> dst_loss(const ProbVars<T>& text, const ProbVars<T>& video);

// (l_vtm + l_ddsl) + lambda * l_dst.
template <typename T>
Var<T> total_loss(Var<T> l_vtm, Var<T> l_ddsl, Var<T> l_dst, T lambda);

// Eager versions.
template <typename T>
T vtm_loss(const Tensor<T>& s_vt, const LogitScale<T>& scale);

template <typename T>
T ddsl_loss(const ProbEmbedding<T>& text, const ProbEmbedding<T>& video);

template <typename T>
T dst_loss(const ProbEmbedding<T>& text, const ProbEmbedding<T>& video);

// Throws ContractError naming the first non-finite component, or when
// lambda < 0.
template <typename T>
LossBreakdown<T> total_loss(T l_vtm, T l_ddsl, T l_dst, T lambda);

}  // namespace msam
