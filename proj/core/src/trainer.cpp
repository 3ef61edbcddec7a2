#include "msam/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "msam/random.hpp"

namespace msam {
namespace {

constexpr std::uint64_t kSamplerSalt = 0x9E3779B97F4A7C15ULL;

template <typename T>
Tensor<T> as(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return t.template cast<T>();
  }
}

std::vector<std::vector<std::size_t>> captions_of(const EmbeddingBatch& data) {
  const auto gt = text_to_video_index(data);
  std::vector<std::vector<std::size_t>> out(data.videos.size());
  for (std::size_t t = 0; t < gt.size(); ++t) out[gt[t]].push_back(t);
  for (std::size_t v = 0; v < out.size(); ++v) {
    if (out[v].empty()) {
      throw ReferenceError("training needs a caption for every video; video " +
                           std::to_string(data.videos[v].id) + " has none");
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  if (steps == 0) throw ContractError("steps must be >= 1");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ContractError("base_lr must be positive");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
    throw ContractError("weight_decay must be >= 0");
  }
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ContractError("lambda must be >= 0");
  if (k == 0) throw ContractError("k must be >= 1");
  if (eval_every == 0) throw ContractError("eval_every must be >= 1");
}

template <typename T>
ModelParams<T> init_params(std::size_t dim, const TrainConfig& config) {
  return init_params<T>(dim, config.k, config.seed);
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond " +
                        std::to_string(total_steps));
  }
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
               double lr, double weight_decay) {
  if (!(lr >= 0)) throw ContractError("adam_step: lr must be >= 0");
  // Check everything before touching anything.
  ModelParams<T>::visit(params, [&](const std::string& name, Tensor<T>& p, bool) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adam_step: no gradient for " + name);
    if (g->second.shape() != p.shape()) {
      throw ContractError("adam_step: gradient for " + name + " has shape " +
                          to_string(g->second.shape()) + ", parameter has " + to_string(p.shape()));
    }
  });
  const std::size_t t = ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, double(t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, double(t));
  ModelParams<T>::visit(params, [&](const std::string& name, Tensor<T>& p, bool decays) {
    const auto g = grads.at(name).data();
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ContractError("adam_step: optimizer state for " + name + " has the wrong shape");
    }
    auto pd = p.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = g[i];
      const double mi = kAdamBeta1 * double(md[i]) + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * double(vd[i]) + (1.0 - kAdamBeta2) * gi * gi;
      md[i] = T(mi);
      vd[i] = T(vi);
      double x = pd[i];
      if (decays) x -= lr * weight_decay * x;
      x -= lr * (mi / c1) / (std::sqrt(vi / c2) + kAdamEps);
      pd[i] = T(x);
    }
  });
}

template <typename T>
PairedBatch<T> make_pairs(const EmbeddingBatch& data, std::span<const std::size_t> videos,
                          std::span<const std::size_t> texts) {
  if (videos.size() != texts.size() || videos.empty()) {
    throw ContractError("make_pairs: need the same nonzero number of videos and texts");
  }
  return {as<T>(stack_frames(data, videos)), as<T>(stack_video_pooled(data, videos)),
          as<T>(stack_tokens(data, texts)), as<T>(stack_text_pooled(data, texts))};
}

template <typename T>
LossVars<T> build_loss(Tape<T>& tape, const ModelParams<T>& params, const PairedBatch<T>& batch,
                       double lambda, bool share_msalm) {
  params.validate();
  const auto ciffp = bind_params(tape, params.ciffp, "ciffp.", true);
  const auto text = bind_params(tape, params.msalm_text, "msalm_text.", true);
  const auto video = share_msalm ? text : bind_params(tape, params.msalm_video, "msalm_video.", true);
  const Var<T> log_scale = tape.parameter("scale.log_tau_inv", params.scale.log_tau_inv);

  const Var<T> frames = tape.constant(batch.frames);
  const Var<T> text_pooled = tape.constant(batch.text_pooled);
  const Var<T> s_vt = ciffp_similarity(frames, text_pooled, ciffp);
  const auto t_emb = adaptive_semantic_construction(tape.constant(batch.tokens), text_pooled, text);
  const auto v_emb =
      adaptive_semantic_construction(frames, tape.constant(batch.video_pooled), video);

  LossVars<T> out;
  out.vtm = vtm_loss(s_vt, log_scale);
  out.ddsl = ddsl_loss(t_emb, v_emb);
  out.dst = dst_loss(t_emb, v_emb);
  out.total = total_loss(out.vtm, out.ddsl, out.dst, T(lambda));
  return out;
}

template <typename T>
LossBreakdown<T> compute_loss(const EmbeddingBatch& data, const ModelParams<T>& params,
                              double lambda, bool share_msalm) {
  const auto captions = captions_of(data);
  std::vector<std::size_t> videos, texts;
  for (std::size_t v = 0; v < captions.size(); ++v) {
    videos.push_back(v);
    texts.push_back(captions[v].front());
  }
  Tape<T> tape;
  const auto loss = build_loss(tape, params, make_pairs<T>(data, videos, texts), lambda, share_msalm);
  return total_loss(loss.vtm.value().item(), loss.ddsl.value().item(), loss.dst.value().item(),
                    T(lambda));
}

template <typename T>
TrainResult<T> train(const EmbeddingBatch& data, const TrainConfig& config) {
  return train<T>(data, config, init_params<T>(data.dim, config));
}

template <typename T>
TrainResult<T> train(const EmbeddingBatch& data, const TrainConfig& config, ModelParams<T> start) {
  config.validate();
  if (auto diags = validate(data); !diags.empty()) {
    throw ValidationError("training data is invalid: " + diags.front().message);
  }
  if (start.dim() != data.dim) throw ContractError("train: parameter width differs from data width");
  if (config.share_msalm) start.msalm_video = start.msalm_text;
  const auto captions = captions_of(data);
  const std::size_t n = data.videos.size();

  TrainResult<T> result{std::move(start), {}};
  OptimizerState<T> state;
  Rng sampler(config.seed ^ kSamplerSalt);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor >= order.size()) {
      order = all_indices(n);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[sampler.below(i)]);
      cursor = 0;
    }
    const std::size_t take = std::min(config.batch_size, n - cursor);
    const std::span<const std::size_t> videos(order.data() + cursor, take);
    cursor += take;
    std::vector<std::size_t> texts;
    for (const std::size_t v : videos) texts.push_back(captions[v][sampler.below(captions[v].size())]);

    Tape<T> tape;
    const auto loss =
        build_loss(tape, result.params, make_pairs<T>(data, videos, texts), config.lambda,
                   config.share_msalm);
    const LossBreakdown<T> parts{loss.vtm.value().item(), loss.ddsl.value().item(),
                                 loss.dst.value().item(), T(config.lambda),
                                 loss.total.value().item()};
    if (!std::isfinite(parts.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << ": l_vtm=" << parts.l_vtm
          << " l_ddsl=" << parts.l_ddsl << " l_dst=" << parts.l_dst << " total=" << parts.total;
      throw TrainingError(msg.str());
    }
    Gradients<T> grads = tape.backward(loss.total);
    if (config.share_msalm) {
      MsalmParams<T>::visit(result.params.msalm_video, [&](const char* name, Tensor<T>& p, bool) {
        grads.emplace(std::string("msalm_video.") + name, Tensor<T>(p.shape()));
      });
    }
    adam_step(result.params, grads, state, cosine_lr(step, config.steps, config.base_lr),
              config.weight_decay);
    if (config.share_msalm) result.params.msalm_video = result.params.msalm_text;
    result.history.steps.push_back(parts);

    if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
      auto [t2v, v2t] = evaluate(data, result.params);
      result.history.evals.push_back({step + 1, std::move(t2v), std::move(v2t)});
    }
  }
  return result;
}

template <typename T>
Tensor<T> score_all(const EmbeddingBatch& data, const ModelParams<T>& params) {
  const auto videos = all_indices(data.videos.size());
  const auto texts = all_indices(data.texts.size());
  return ciffp_scores(as<T>(stack_frames(data, videos)), as<T>(stack_text_pooled(data, texts)),
                      params.ciffp);
}

template <typename T>
std::pair<RetrievalReport, RetrievalReport> evaluate(const EmbeddingBatch& data,
                                                     const ModelParams<T>& params) {
  const auto gt = text_to_video_index(data);
  const Tensor<T> scores = score_all(data, params);
  return {report(t2v_ranks(scores, gt), Direction::TextToVideo),
          report(v2t_ranks(scores, gt), Direction::VideoToText)};
}

#define MSAM_INSTANTIATE(T)                                                                       \
  template ModelParams<T> init_params(std::size_t, const TrainConfig&);                           \
  template void adam_step(ModelParams<T>&, const Gradients<T>&, OptimizerState<T>&, double,       \
                          double);                                                                \
  template PairedBatch<T> make_pairs(const EmbeddingBatch&, std::span<const std::size_t>,         \
                                     std::span<const std::size_t>);                               \
  template LossVars<T> build_loss(Tape<T>&, const ModelParams<T>&, const PairedBatch<T>&, double, \
                                  bool);                                                          \
  template LossBreakdown<T> compute_loss(const EmbeddingBatch&, const ModelParams<T>&, double,    \
                                         bool);                                                   \
  template TrainResult<T> train(const EmbeddingBatch&, const TrainConfig&);                       \
  template TrainResult<T> train(const EmbeddingBatch&, const TrainConfig&, ModelParams<T>);       \
  template Tensor<T> score_all(const EmbeddingBatch&, const ModelParams<T>&);                     \
  template std::pair<RetrievalReport, RetrievalReport> evaluate(const EmbeddingBatch&,            \
                                                                const ModelParams<T>&);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
