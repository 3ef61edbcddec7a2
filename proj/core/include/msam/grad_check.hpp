#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "msam/autodiff.hpp"

namespace msam {

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
  // ||a - n||_2 / max(||a||_2, ||n||_2, 1e-8) over the whole tensor. Less
  // sensitive than the elementwise figure to coordinates whose gradient is
  // below the finite-difference noise floor.
  double norm_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error() const;
  double max_norm_rel_error() const;
};

// Builds a graph on the given tape (registering its parameters) and returns
// the scalar loss.
template <typename T>
using LossBuilder = std::function<Var<T>(Tape<T>&)>;

// Compares reverse-mode gradients against central differences
// (f(p+h) - f(p-h)) / 2h for every coordinate of every parameter. Relative
// error is |a - n| / max(|a|, |n|, 1e-8). Perturbed losses are obtained by
// replaying the recorded tape.
//
// Throws ValidationError naming the parameter and coordinate if the function
// becomes non-finite.
template <typename T>
GradCheckReport grad_check(const LossBuilder<T>& build, T step);

double relative_error(double analytic, double numeric);

}  // namespace msam
