#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msam/grad_check.hpp"
#include "msam/model.hpp"
#include "msam/trainer.hpp"

namespace msam {

// Seeded synthetic problem for checking every loss against central
// differences at 64-bit precision.
struct GradCheckSetup {
  std::size_t batch = 8;
  std::size_t frames = 4;
  std::size_t tokens = 5;
  std::size_t dim = 16;
  std::size_t k = 3;
  std::uint64_t seed = 1;
  double noise = 0.5;
  double step = 1e-5;
  double lambda = 0.1;
};

struct LossGradCheck {
  std::string loss;  // "vtm", "ddsl", "dst" or "total"
  GradCheckReport report;
};

// Initial parameters moved off their symmetric starting point (identity
// projections and a zero gate make many gradients vanish) and a log scale of
// ln 10 so the contrastive softmax is not saturated.
ModelParams<double> gradcheck_params(const GradCheckSetup& setup);

PairedBatch<double> gradcheck_batch(const GradCheckSetup& setup);

std::vector<LossGradCheck> run_loss_gradchecks(const GradCheckSetup& setup);

}  // namespace msam
