#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msam/autodiff.hpp"
#include "msam/embio.hpp"
#include "msam/losses.hpp"
#include "msam/metrics.hpp"
#include "msam/model.hpp"

namespace msam {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t steps = 500;
  double base_lr = 1e-5;
  double weight_decay = 0.2;
  double lambda = 0.1;
  std::size_t k = 7;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  // One MSALM instance for both modalities instead of one each.
  bool share_msalm = false;

  void validate() const;
};

template <typename T>
ModelParams<T> init_params(std::size_t dim, const TrainConfig& config);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::size_t step = 0;
};

// One AdamW update of every parameter. Tensors flagged as decaying are first
// shrunk by (1 - lr * weight_decay); then the bias-corrected Adam step is
// applied. Every parameter needs a gradient of its own shape.
template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
               double lr, double weight_decay);

// Paired (video i, caption i) slice of a batch, stacked.
template <typename T>
struct PairedBatch {
  Tensor<T> frames;        // [B x F x D]
  Tensor<T> video_pooled;  // [B x D]
  Tensor<T> tokens;        // [B x L x D]
  Tensor<T> text_pooled;   // [B x D]
};

template <typename T>
PairedBatch<T> make_pairs(const EmbeddingBatch& data, std::span<const std::size_t> videos,
                          std::span<const std::size_t> texts);

template <typename T>
struct LossVars {
  Var<T> vtm, ddsl, dst, total;
};

// Records the full objective on `tape` with every model tensor as a named
// parameter. With `share_msalm` the video branch reuses msalm_text.
template <typename T>
LossVars<T> build_loss(Tape<T>& tape, const ModelParams<T>& params, const PairedBatch<T>& batch,
                       double lambda, bool share_msalm);

// Objective over every video paired with its first caption.
template <typename T>
LossBreakdown<T> compute_loss(const EmbeddingBatch& data, const ModelParams<T>& params,
                              double lambda, bool share_msalm = false);

template <typename T>
struct EvalRecord {
  std::size_t step = 0;  // completed steps
  RetrievalReport t2v;
  RetrievalReport v2t;
};

template <typename T>
struct TrainHistory {
  std::vector<LossBreakdown<T>> steps;
  std::vector<EvalRecord<T>> evals;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  TrainHistory<T> history;
};

// Deterministic in (data, config). Each epoch shuffles the videos and walks
// them in chunks of batch_size (the last chunk may be smaller); each video
// contributes one seeded-random caption. A non-finite loss throws
// TrainingError naming the step and components.
template <typename T>
TrainResult<T> train(const EmbeddingBatch& data, const TrainConfig& config);

template <typename T>
TrainResult<T> train(const EmbeddingBatch& data, const TrainConfig& config, ModelParams<T> start);

// Scores every video against every text with the CIFFP similarity.
template <typename T>
Tensor<T> score_all(const EmbeddingBatch& data, const ModelParams<T>& params);

// Read-only; returns (text-to-video, video-to-text).
template <typename T>
std::pair<RetrievalReport, RetrievalReport> evaluate(const EmbeddingBatch& data,
                                                     const ModelParams<T>& params);

}  // namespace msam
