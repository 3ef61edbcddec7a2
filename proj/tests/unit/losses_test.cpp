#include <cmath>
#include <limits>

#include "msam/gradcheck_suite.hpp"
#include "msam/losses.hpp"
#include "test_support.hpp"

using namespace msam;
using msam::test::random_tensor;

namespace {

const double kDdslMin = 0.5 * std::log(2.0) - 0.5;

LogitScale<double> scale_of(double effective) {
  LogitScale<double> s;
  s.log_tau_inv[0] = std::log(effective);
  return s;
}

ProbEmbedding<double> random_prob(std::size_t n, std::size_t k, std::size_t d, Rng& rng) {
  ProbEmbedding<double> p{random_tensor<double>({n, k, d}, rng), Tensor<double>(Shape{n, k, d})};
  for (auto& s : p.sigma.data()) s = 0.05 + 2 * rng.uniform();
  return p;
}

// Rows of a random orthonormal k x d matrix (Gram-Schmidt).
Tensor<double> orthonormal_rows(std::size_t k, std::size_t d, Rng& rng) {
  Tensor<double> q = random_tensor<double>({k, d}, rng);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t x = 0; x < d; ++x) dot += q.at({i, x}) * q.at({j, x});
      for (std::size_t x = 0; x < d; ++x) q.at({i, x}) -= dot * q.at({j, x});
    }
    double n = 0;
    for (std::size_t x = 0; x < d; ++x) n += q.at({i, x}) * q.at({i, x});
    for (std::size_t x = 0; x < d; ++x) q.at({i, x}) /= std::sqrt(n);
  }
  return q;
}

TEST(LogitScale, DefaultAndClamp) {
  LogitScale<double> s;
  EXPECT_NEAR(s.log_tau_inv[0], 4.605170185988092, 1e-15);
  EXPECT_NEAR(s.effective(), 100.0, 1e-12);
  s.log_tau_inv[0] = std::log(500.0);
  EXPECT_NEAR(s.effective(), 100.0, 1e-12);
}

TEST(Vtm, UniformScoresGiveTwoLogN) {
  EXPECT_NEAR(vtm_loss(Tensor<double>(Shape{2, 2}), LogitScale<double>{}), 1.3862943611198906, 1e-12);
  for (std::size_t n : {1u, 3u, 8u})
    EXPECT_NEAR(vtm_loss(Tensor<double>(Shape{n, n}, 0.7), scale_of(3.0)), 2 * std::log(double(n)), 1e-12);
}

TEST(Vtm, IdentityWithUnitGap) {
  EXPECT_NEAR(vtm_loss(make_matrix<double>({{1, 0}, {0, 1}}), scale_of(1.0)), 2 * std::log1p(std::exp(-1.0)),
              1e-12);
  EXPECT_NEAR(vtm_loss(make_matrix<double>({{1, 0}, {0, 1}}), scale_of(1.0)), 0.626523, 1e-6);
}

TEST(Vtm, ShiftInvariantAndNonNegative) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_tensor<double>({5, 5}, rng);
    const auto sc = scale_of(0.5 + 20 * rng.uniform());
    const double base = vtm_loss(s, sc);
    EXPECT_GE(base, 0.0);
    Tensor<double> shifted = s;
    const double c = 10 * rng.normal();
    for (auto& x : shifted.data()) x += c;
    EXPECT_NEAR(vtm_loss(shifted, sc), base, 1e-9);
  }
}

TEST(Vtm, DecreasesAsDiagonalGrows) {
  Tensor<double> s = make_matrix<double>({{2.0, 0.1, -0.3}, {0.2, 1.5, 0.0}, {-0.1, 0.4, 1.8}});
  double prev = vtm_loss(s, scale_of(2.0));
  for (int step = 0; step < 3; ++step) {
    for (std::size_t i = 0; i < 3; ++i) s.at({i, i}) += 0.25;
    const double next = vtm_loss(s, scale_of(2.0));
    EXPECT_LT(next, prev);
    prev = next;
  }
}

TEST(Vtm, NonSquareIsContractError) {
  EXPECT_THROW(vtm_loss(Tensor<double>(Shape{2, 3}), LogitScale<double>{}), ContractError);
  Tape<double> tape;
  EXPECT_THROW(vtm_loss(tape.constant(Tensor<double>(Shape{2, 3})), tape.constant(Tensor<double>(Shape{1}))),
               ContractError);
}

TEST(Vtm, ClampedScaleHasNoGradient) {
  Rng rng(2);
  const auto s = random_tensor<double>({4, 4}, rng);
  Tape<double> tape;
  const auto t = tape.parameter("scale", make_vector<double>({std::log(300.0)}));
  const auto loss = vtm_loss(tape.constant(s), t);
  EXPECT_NEAR(loss.value().item(), vtm_loss(s, scale_of(100.0)), 1e-12);
  EXPECT_EQ(tape.backward(loss).at("scale")[0], 0.0);
}

TEST(Ddsl, EqualDistributionsGiveExactZero) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_prob(3, 2, 4, rng);
    EXPECT_EQ(ddsl_loss(p, p), 0.0);
  }
}

TEST(Ddsl, ClosedFormAnchors) {
  Rng rng(4);
  auto text = random_prob(2, 3, 4, rng);
  auto video = text;
  for (auto& s : video.sigma.data()) s /= std::sqrt(2.0);
  EXPECT_NEAR(ddsl_loss(text, video), kDdslMin, 1e-12);
  EXPECT_NEAR(ddsl_loss(text, video), -0.153426, 1e-6);

  ProbEmbedding<double> a{Tensor<double>(Shape{1, 1, 3}, 1.0), Tensor<double>(Shape{1, 1, 3}, 1.0)};
  ProbEmbedding<double> b{Tensor<double>(Shape{1, 1, 3}, 0.0), Tensor<double>(Shape{1, 1, 3}, 1.0)};
  EXPECT_NEAR(ddsl_loss(a, b), 1.0, 1e-15);
}

TEST(Ddsl, NeverBelowAnalyticMinimum) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = random_prob(2, 2, 3, rng);
    const auto v = random_prob(2, 2, 3, rng);
    EXPECT_GE(ddsl_loss(t, v), kDdslMin - 1e-9);
  }
}

TEST(Ddsl, ContractErrors) {
  Rng rng(6);
  const auto a = random_prob(2, 2, 3, rng);
  const auto b = random_prob(2, 3, 3, rng);
  EXPECT_THROW(ddsl_loss(a, b), ContractError);
  auto c = a;
  c.sigma[4] = 0.0;
  EXPECT_THROW(ddsl_loss(a, c), ContractError);
  EXPECT_THROW(ddsl_loss(c, a), ContractError);
}

TEST(Dst, OrthonormalRatiosGiveZero) {
  Rng rng(7);
  for (std::size_t k : {1u, 2u, 4u}) {
    ProbEmbedding<double> t{Tensor<double>(Shape{3, k, 5}), Tensor<double>(Shape{3, k, 5}, 1.0)};
    ProbEmbedding<double> v = t;
    for (std::size_t n = 0; n < 3; ++n) {
      const auto qt = orthonormal_rows(k, 5, rng), qv = orthonormal_rows(k, 5, rng);
      std::copy(qt.data().begin(), qt.data().end(), t.mu.data().begin() + n * k * 5);
      std::copy(qv.data().begin(), qv.data().end(), v.mu.data().begin() + n * k * 5);
    }
    // Non-unit sigma: scale mu with it so the ratio is unchanged.
    for (std::size_t i = 0; i < v.mu.size(); ++i) {
      v.sigma[i] = 0.5 + rng.uniform();
      v.mu[i] *= v.sigma[i];
    }
    EXPECT_NEAR(dst_loss(t, v), 0.0, 1e-9) << "k " << k;
  }
}

TEST(Dst, AllOnesRatioGivesSqrtTen) {
  ProbEmbedding<double> t{Tensor<double>(Shape{1, 2, 2}, 1.0), Tensor<double>(Shape{1, 2, 2}, 1.0)};
  ProbEmbedding<double> v{Tensor<double>(Shape{1, 2, 2}, {1, 0, 0, 1}), Tensor<double>(Shape{1, 2, 2}, 1.0)};
  EXPECT_NEAR(dst_loss(t, v), 3.1622776601683795, 1e-12);
  EXPECT_NEAR(dst_loss(v, t), 3.1622776601683795, 1e-12);
}

TEST(Dst, SingleRowIsSquaredNormGap) {
  Rng rng(8);
  const auto t = random_prob(4, 1, 3, rng);
  const auto v = random_prob(4, 1, 3, rng);
  double expected = 0;
  for (const auto* p : {&t, &v})
    for (std::size_t n = 0; n < 4; ++n) {
      double r2 = 0;
      for (std::size_t x = 0; x < 3; ++x) {
        const double r = p->mu[n * 3 + x] / p->sigma[n * 3 + x];
        r2 += r * r;
      }
      expected += std::abs(r2 - 1) / 4;
    }
  EXPECT_NEAR(dst_loss(t, v), expected, 1e-12);
}

TEST(Dst, InvariantUnderRowPermutation) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_prob(2, 4, 5, rng);
    const auto v = random_prob(2, 4, 5, rng);
    const std::size_t perm[4] = {3, 1, 0, 2};
    auto tp = t;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t x = 0; x < 5; ++x) {
          tp.mu.at({n, i, x}) = t.mu.at({n, perm[i], x});
          tp.sigma.at({n, i, x}) = t.sigma.at({n, perm[i], x});
        }
    EXPECT_NEAR(dst_loss(tp, v), dst_loss(t, v), 1e-9);
  }
}

TEST(Dst, PositiveOnRandomInputs) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) EXPECT_GT(dst_loss(random_prob(2, 3, 4, rng), random_prob(2, 3, 4, rng)), 0.0);
}

TEST(Dst, NonPositiveSigmaIsContractError) {
  Rng rng(11);
  auto t = random_prob(2, 2, 2, rng);
  const auto v = random_prob(2, 2, 2, rng);
  t.sigma[0] = -1;
  EXPECT_THROW(dst_loss(t, v), ContractError);
}

TEST(Total, Arithmetic) {
  const auto a = total_loss(1.0, 0.0, 0.0, 0.1);
  EXPECT_EQ(a.total, 1.0);
  const auto b = total_loss(1.0, 0.5, 2.0, 0.1);
  EXPECT_NEAR(b.total, 1.7, 1e-15);
  EXPECT_EQ(b.total, (1.0 + 0.5) + 0.1 * 2.0);
  EXPECT_EQ(b.l_dst, 2.0);
  EXPECT_EQ(b.lambda, 0.1);
  EXPECT_EQ(total_loss(1.0, 0.5, 2.0, 0.0).total, total_loss(1.0, 0.5, 77.0, 0.0).total);
}

TEST(Total, RejectsNonFiniteAndNegativeLambda) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(1.0, nan, 0.0, 0.1);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("ddsl"), std::string::npos) << e.what();
  }
  EXPECT_THROW(total_loss(1.0, 0.0, std::numeric_limits<double>::infinity(), 0.1), ContractError);
  EXPECT_THROW(total_loss(1.0, 0.0, 0.0, -0.1), ContractError);
}

TEST(Losses, TapeMatchesEager) {
  Rng rng(12);
  const auto s = random_tensor<double>({4, 4}, rng);
  const auto t = random_prob(4, 3, 5, rng);
  const auto v = random_prob(4, 3, 5, rng);
  LogitScale<double> sc = scale_of(7.0);
  Tape<double> tape;
  const ProbVars<double> tv{tape.constant(t.mu), tape.constant(t.sigma)};
  const ProbVars<double> vv{tape.constant(v.mu), tape.constant(v.sigma)};
  const auto vtm = vtm_loss(tape.constant(s), tape.constant(sc.log_tau_inv));
  const auto ddsl = ddsl_loss(tv, vv);
  const auto dst = dst_loss(tv, vv);
  const auto total = total_loss(vtm, ddsl, dst, 0.1);
  EXPECT_NEAR(vtm.value().item(), vtm_loss(s, sc), 1e-12);
  EXPECT_NEAR(ddsl.value().item(), ddsl_loss(t, v), 1e-12);
  EXPECT_NEAR(dst.value().item(), dst_loss(t, v), 1e-12);
  EXPECT_EQ(total.value().item(),
            (vtm.value().item() + ddsl.value().item()) + 0.1 * dst.value().item());
}

TEST(Losses, GradientsThroughWholeModelAtPinnedSeed) {
  GradCheckSetup setup;
  for (const auto& r : run_loss_gradchecks(setup)) {
    EXPECT_LE(r.report.max_rel_error(), 1e-4) << r.loss;
    EXPECT_LE(r.report.max_norm_rel_error(), 1e-4) << r.loss;
  }
}

TEST(Losses, GradientsThroughWholeModelOtherSeedsNormWise) {
  for (std::uint64_t seed : {2u, 3u}) {
    GradCheckSetup setup;
    setup.seed = seed;
    for (const auto& r : run_loss_gradchecks(setup))
      EXPECT_LE(r.report.max_norm_rel_error(), 1e-4) << r.loss << " seed " << seed;
  }
}

}  // namespace
