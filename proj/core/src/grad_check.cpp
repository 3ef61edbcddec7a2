#include "msam/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace msam {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

double GradCheckReport::max_norm_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.norm_rel_error);
  return worst;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
GradCheckReport grad_check(const LossBuilder<T>& build, T step) {
  Tape<T> tape;
  const Var<T> loss = build(tape);
  if (loss.value().size() != 1) throw ContractError("grad_check: loss must be scalar");
  if (!all_finite(loss.value())) throw ValidationError("grad_check: loss is not finite at the base point");
  const Gradients<T> grads = tape.backward(loss);

  GradCheckReport report;
  for (const Var<T>& p : tape.parameters()) {
    ParamGradCheck check;
    check.name = tape.parameter_name(p);
    const Tensor<T> base = p.value();
    const Tensor<T>& analytic = grads.at(check.name);
    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Tensor<T> probe = base;
      probe[i] = base[i] + step;
      tape.set_value(p, probe);
      tape.replay();
      const T plus = loss.value().item();
      probe[i] = base[i] - step;
      tape.set_value(p, probe);
      tape.replay();
      const T minus = loss.value().item();
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        tape.set_value(p, base);
        tape.replay();
        throw ValidationError("grad_check: non-finite loss when perturbing " + check.name + "[" +
                              std::to_string(i) + "]");
      }
      const double numeric = (double(plus) - double(minus)) / (2.0 * double(step));
      const double err = relative_error(double(analytic[i]), numeric);
      diff_sq += (double(analytic[i]) - numeric) * (double(analytic[i]) - numeric);
      analytic_sq += double(analytic[i]) * double(analytic[i]);
      numeric_sq += numeric * numeric;
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = double(analytic[i]);
        check.numeric = numeric;
      }
    }
    check.norm_rel_error =
        std::sqrt(diff_sq) / std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), 1e-8});
    tape.set_value(p, base);
    tape.replay();
    report.params.push_back(std::move(check));
  }
  return report;
}

template GradCheckReport grad_check(const LossBuilder<float>&, float);
template GradCheckReport grad_check(const LossBuilder<double>&, double);

}  // namespace msam
