#include <cmath>
#include <cstring>
#include <numbers>

#include "msam/trainer.hpp"
#include "test_support.hpp"

using namespace msam;
using msam::test::random_tensor;

namespace {

EmbeddingBatch overfit_data() {
  SynthSpec s;
  s.num_videos = 16;
  s.frames_per_video = 4;
  s.captions_per_video = 1;
  s.token_len = 4;
  s.dim = 32;
  s.cluster_noise = 0.05;
  s.seed = 7;
  return gen_synthetic(s);
}

EmbeddingBatch tiny_data(std::uint64_t seed = 1) {
  SynthSpec s;
  s.num_videos = 6;
  s.frames_per_video = 3;
  s.captions_per_video = 2;
  s.token_len = 3;
  s.dim = 8;
  s.cluster_noise = 0.3;
  s.seed = seed;
  return gen_synthetic(s);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.steps = 12;
  c.k = 2;
  c.seed = 5;
  c.eval_every = 5;
  c.base_lr = 1e-3;
  return c;
}

template <typename T>
Gradients<T> filled_grads(const ModelParams<T>& p, Rng* rng) {
  Gradients<T> g;
  ModelParams<T>::visit(p, [&](const std::string& name, const Tensor<T>& t, bool) {
    g[name] = rng ? random_tensor<T>(t.shape(), *rng) : Tensor<T>(t.shape());
  });
  return g;
}

TEST(Config, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.base_lr, 1e-5);
  EXPECT_EQ(c.weight_decay, 0.2);
  EXPECT_EQ(c.lambda, 0.1);
  EXPECT_EQ(c.k, 7u);
  c.validate();
  TrainConfig bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = c;
  bad.base_lr = -1;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = c;
  bad.k = 0;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(Init, IdentityAndZeroGate) {
  TrainConfig c;
  c.seed = 9;
  const auto a = init_params<float>(5, c);
  EXPECT_TRUE(bit_identical(a, init_params<float>(5, c)));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a.msalm_text.ff_weight.at({i, j}), i == j ? 1.0f : 0.0f);
  EXPECT_EQ(a.k(), 7u);
  Rng rng(1);
  const auto tr = ciffp_similarity(random_tensor<float>({3, 4, 5}, rng), random_tensor<float>({2, 5}, rng), a.ciffp);
  for (float s : tr.s_v.data()) EXPECT_EQ(s, 0.5f);
}

TEST(CosineLr, Examples) {
  EXPECT_EQ(cosine_lr(0, 100, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3), 5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(25, 100, 2.0), 1.0 + std::cos(std::numbers::pi / 4), 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 1e-3), ContractError);
  EXPECT_THROW(cosine_lr(0, 0, 1e-3), ContractError);
}

TEST(Adam, ZeroGradientZeroDecayLeavesParams) {
  auto p = init_params<double>(4, 2, 3);
  const auto before = p;
  OptimizerState<double> st;
  adam_step(p, filled_grads(p, nullptr), st, 0.01, 0.0);
  EXPECT_TRUE(bit_identical(p, before));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, DecoupledDecayOnWeightsOnly) {
  auto p = init_params<float>(4, 2, 3);
  const auto before = p;
  OptimizerState<float> st;
  adam_step(p, filled_grads(p, nullptr), st, 0.01, 0.2);
  std::vector<std::pair<std::string, bool>> seen;
  ModelParams<float>::visit(p, [&](const std::string& name, const Tensor<float>& t, bool decays) {
    seen.emplace_back(name, decays);
    const Tensor<float>* old = nullptr;
    ModelParams<float>::visit(before, [&](const std::string& n, const Tensor<float>& o, bool) {
      if (n == name) old = &o;
    });
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (decays) {
        EXPECT_FLOAT_EQ(t[i], (*old)[i] * 0.998f) << name;
      } else {
        EXPECT_EQ(t[i], (*old)[i]) << name;
      }
    }
  });
  // Biases, layer-norm terms and the log scale never decay.
  for (const auto& [name, decays] : seen) {
    const bool exempt = name.find("bias") != std::string::npos || name.find("ln_") != std::string::npos ||
                        name == "scale.log_tau_inv";
    EXPECT_EQ(decays, !exempt) << name;
  }
}

TEST(Adam, FirstStepMovesEachCoordinateByLr) {
  auto p = init_params<double>(4, 2, 3);
  const auto before = p;
  Rng rng(4);
  const auto g = filled_grads(p, &rng);
  OptimizerState<double> st;
  adam_step(p, g, st, 0.01, 0.0);
  ModelParams<double>::visit(p, [&](const std::string& name, const Tensor<double>& t, bool) {
    const Tensor<double>* old = nullptr;
    ModelParams<double>::visit(before, [&](const std::string& n, const Tensor<double>& o, bool) {
      if (n == name) old = &o;
    });
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double step = (*old)[i] - t[i];
      const double gi = g.at(name)[i];
      // m_hat / (sqrt(v_hat) + eps) = g / (|g| + eps).
      EXPECT_NEAR(step, 0.01 * gi / (std::abs(gi) + 1e-8), 1e-15) << name;
      if (std::abs(gi) > 0.1) {
        EXPECT_NEAR(std::abs(step), 0.01, 1e-8) << name;
      }
    }
  });
  EXPECT_EQ(st.m.size(), g.size());
}

TEST(Adam, BadGradientsLeaveParamsUntouched) {
  auto p = init_params<double>(4, 2, 3);
  const auto before = p;
  OptimizerState<double> st;
  Rng rng(5);
  auto g = filled_grads(p, &rng);
  g.erase("msalm_video.mu_bias");
  EXPECT_THROW(adam_step(p, g, st, 0.01, 0.1), ContractError);
  g = filled_grads(p, &rng);
  g["scale.log_tau_inv"] = Tensor<double>(Shape{2});
  EXPECT_THROW(adam_step(p, g, st, 0.01, 0.1), ContractError);
  EXPECT_TRUE(bit_identical(p, before));
  EXPECT_EQ(st.step, 0u);
}

TEST(Train, DeterministicHistoryAndParams) {
  const auto data = tiny_data();
  const auto a = train<float>(data, tiny_config());
  const auto b = train<float>(data, tiny_config());
  EXPECT_TRUE(bit_identical(a.params, b.params));
  ASSERT_EQ(a.history.steps.size(), 12u);
  for (std::size_t i = 0; i < a.history.steps.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a.history.steps[i], &b.history.steps[i], sizeof(LossBreakdown<float>)), 0);
  }
  // Evaluations after steps 5, 10 and at the end.
  ASSERT_EQ(a.history.evals.size(), 3u);
  EXPECT_EQ(a.history.evals[0].step, 5u);
  EXPECT_EQ(a.history.evals[2].step, 12u);
  EXPECT_EQ(encode_checkpoint(a.params), encode_checkpoint(b.params));

  TrainConfig other = tiny_config();
  other.seed = 6;
  EXPECT_FALSE(bit_identical(train<float>(data, other).params, a.params));
}

TEST(Train, EveryParameterGroupReceivesUpdates) {
  const auto data = tiny_data();
  TrainConfig c = tiny_config();
  c.steps = 1;
  const auto start = init_params<float>(data.dim, c);
  const auto out = train<float>(data, c, start);
  ASSERT_GT(out.history.steps[0].total, 0.0f);
  for (const char* prefix : {"ciffp.", "msalm_text.", "msalm_video.", "scale."}) {
    bool changed = false;
    ModelParams<float>::visit(out.params, [&](const std::string& name, const Tensor<float>& t, bool) {
      if (name.rfind(prefix, 0) != 0) return;
      ModelParams<float>::visit(start, [&](const std::string& n, const Tensor<float>& o, bool) {
        if (n == name && !(o == t)) changed = true;
      });
    });
    EXPECT_TRUE(changed) << prefix;
  }
}

TEST(Train, LambdaDoesNotChangeStepZeroForward) {
  const auto data = tiny_data();
  TrainConfig c0 = tiny_config(), c1 = tiny_config();
  c0.lambda = 0.0;
  c1.lambda = 0.1;
  const auto a = train<float>(data, c0);
  const auto b = train<float>(data, c1);
  EXPECT_EQ(a.history.steps[0].l_vtm, b.history.steps[0].l_vtm);
  EXPECT_EQ(a.history.steps[0].l_ddsl, b.history.steps[0].l_ddsl);
  EXPECT_EQ(a.history.steps[0].l_dst, b.history.steps[0].l_dst);
  EXPECT_EQ(a.history.steps[0].total, a.history.steps[0].l_vtm + a.history.steps[0].l_ddsl);
  EXPECT_FALSE(bit_identical(a.params, b.params));
}

TEST(Train, SharedBranchStaysInSync) {
  const auto data = tiny_data();
  TrainConfig c = tiny_config();
  c.share_msalm = true;
  const auto out = train<float>(data, c);
  bool same = true;
  MsalmParams<float>::visit(out.params.msalm_text, [&](const char* name, const Tensor<float>& t, bool) {
    MsalmParams<float>::visit(out.params.msalm_video, [&](const char* n, const Tensor<float>& v, bool) {
      if (std::string(n) == name && !(t == v)) same = false;
    });
  });
  EXPECT_TRUE(same);
}

TEST(Train, NonFiniteLossAborts) {
  const auto data = tiny_data();
  TrainConfig c = tiny_config();
  auto start = init_params<float>(data.dim, c);
  for (auto& x : start.msalm_text.mu_weight.data()) x *= 1e30f;
  try {
    train<float>(data, c, start);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dst"), std::string::npos) << msg;
  }
}

TEST(Train, RejectsRaggedData) {
  auto data = tiny_data();
  data.videos[0].frames = Tensor<float>(Shape{5, data.dim}, 0.1f);
  EXPECT_THROW(train<float>(data, tiny_config()), ContractError);
}

TEST(Evaluate, ReadOnly) {
  const auto data = tiny_data();
  const auto trained = train<float>(data, tiny_config()).params;
  const auto copy = trained;
  const auto [t2v, v2t] = evaluate(data, trained);
  EXPECT_TRUE(bit_identical(trained, copy));
  EXPECT_EQ(t2v.ranks.ranks.size(), data.texts.size());
  EXPECT_EQ(v2t.ranks.ranks.size(), data.videos.size());
}

TEST(Evaluate, OrthogonalCentersRetrievePerfectly) {
  const std::size_t n = 8;
  EmbeddingBatch data;
  data.dim = n;
  for (std::size_t v = 0; v < n; ++v) {
    Tensor<float> e(Shape{n});
    e[v] = 1;
    Tensor<float> frames(Shape{3, n});
    for (std::size_t f = 0; f < 3; ++f) frames.at({f, v}) = 1;
    data.videos.push_back({v, frames, e});
    for (std::size_t c = 0; c < 2; ++c)
      data.texts.push_back({data.texts.size(), v, frames.reshaped({3, n}), e});
  }
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    TrainConfig c;
    c.seed = seed;
    const auto [t2v, v2t] = evaluate(data, init_params<float>(n, c));
    EXPECT_EQ(t2v.r_at.at(1), 1.0);
    EXPECT_EQ(v2t.r_at.at(1), 1.0);
  }
}

TEST(Evaluate, ScoresMatchCiffpSimilarity) {
  const auto data = tiny_data(3);
  const auto p = train<double>(data, tiny_config()).params;
  const auto s = score_all(data, p);
  const auto texts = stack_text_pooled(data, all_indices(data.texts.size())).cast<double>();
  const auto frames = stack_frames(data, all_indices(data.videos.size())).cast<double>();
  EXPECT_LE(msam::test::max_abs_diff(s, ciffp_similarity(frames, texts, p.ciffp).s_vt), 1e-12);
}

TEST(ComputeLoss, MatchesFirstStepOfFullBatchTraining) {
  const auto data = overfit_data();
  TrainConfig c;
  c.steps = 1;
  c.k = 3;
  const auto start = init_params<float>(data.dim, c);
  const auto l = compute_loss(data, start, c.lambda);
  // One caption per video and a batch larger than the data: step 0 sees the
  // same pairs, only in shuffled order.
  const auto h = train<float>(data, c, start).history.steps[0];
  EXPECT_NEAR(l.l_vtm, h.l_vtm, 1e-4 * std::abs(h.l_vtm) + 1e-5);
  EXPECT_NEAR(l.l_dst, h.l_dst, 1e-4 * std::abs(h.l_dst));
  EXPECT_NEAR(l.l_ddsl, h.l_ddsl, 1e-4 * std::abs(h.l_ddsl) + 1e-5);
}

TEST(Train, OverfitsSixteenPairs) {
  const auto data = overfit_data();
  TrainConfig c;
  c.steps = 500;
  c.k = 3;
  c.seed = 0;
  const auto out = train<float>(data, c);
  const auto& st = out.history.steps;
  ASSERT_EQ(st.size(), 500u);
  EXPECT_LT(st.back().total, st.front().total);
  EXPECT_LE(st.back().l_dst, st.front().l_dst);
  const auto [t2v, v2t] = evaluate(data, out.params);
  EXPECT_EQ(t2v.r_at.at(1), 1.0);
  EXPECT_EQ(v2t.r_at.at(1), 1.0);
  // l_vtm falls window over window.
  double prev = INFINITY;
  for (std::size_t w = 0; w < 10; ++w) {
    double mean = 0;
    for (std::size_t i = 0; i < 50; ++i) mean += st[w * 50 + i].l_vtm / 50.0;
    EXPECT_LE(mean, prev) << "window " << w;
    prev = mean;
  }
}

}  // namespace
