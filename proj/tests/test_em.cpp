// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/em.hpp"

#include "dsmoe/sampler.hpp"
#include "dsmoe/voronoi.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace dsmoe {
namespace {

using testing::normal_pdf;

Dataset single_point(double x, double y) {
  Dataset d;
  d.x = RowMat::Constant(1, 1, x);
  d.y = Vec::Constant(1, y);
  return d;
}

TEST(EStep, TheoremOneSharedResponsibilityAtOrigin) {
  const auto m = testing::theorem_truth(1);
  const auto r = e_step(m, single_point(0.0, 0.0));
  const double dens = 0.5 * normal_pdf(0, 0, 0.25) + 0.5 * normal_pdf(0, 0, 0.4);
  EXPECT_NEAR(r.r(0, 0), 0.5 * normal_pdf(0, 0, 0.25) / dens, 1e-14);
  EXPECT_NEAR(r.r(0, 0), 0.55849, 1e-5);
  EXPECT_NEAR(r.r.row(0).sum(), 1.0, 1e-14);
}

TEST(EStep, TopKMaskedColumnIsZero) {
  MixingMeasurePair m;
  m.gating = {GateKind::SoftmaxTopK, 1};
  m.shared = {{1.0, {1.0, 0.0}, 1.0}};
  m.routed = {{0.0, {1.0}, {0.0, 0.0}, 1.0}, {0.0, {-1.0}, {0.0, 0.0}, 1.0}};
  const auto r = e_step(m, single_point(0.5, 0.2));
  EXPECT_EQ(r.r(0, 2), 0.0);
  EXPECT_GT(r.r(0, 1), 0.0);
}

TEST(EStepProperty, RowsSumToOne) {
  auto rng = make_rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto m = testing::random_model(rng, 1, 2, 3, ExpertKind::GeluOuterInnerBias,
                                         ExpertKind::Linear, {GateKind::NormalizedSigmoid, 0});
    const Dataset data = sample_dataset(m, {200, -3.0, 3.0, static_cast<std::uint64_t>(t)});
    const auto r = e_step(m, data);
    EXPECT_NEAR((r.r.rowwise().sum().array() - 1.0).abs().maxCoeff(), 0.0, 1e-12);
    EXPECT_EQ(r.k1, 2);
    EXPECT_EQ(r.k2(), 3);
  }
}

TEST(MStep, AllSharedMassOnFirstAtom) {
  auto rng = make_rng(4);
  const auto m = testing::random_model(rng, 1, 3, 2, ExpertKind::Linear, ExpertKind::Linear,
                                       {GateKind::SoftmaxDense, 0});
  const Dataset data = sample_dataset(m, {100, -3.0, 3.0, 1});
  Responsibilities r{Mat::Zero(100, 5), 3};
  r.r.col(0).setConstant(0.5);
  r.r.col(3).setConstant(0.25);
  r.r.col(4).setConstant(0.25);
  EMConfig cfg;
  const auto next = m_step(r, data, m, cfg);
  // Accepted only if the likelihood does not drop; either way weights stay a simplex.
  // Atoms 1 and 2 carry no mass, so they are frozen and atom 0 takes the rest.
  double total = 0.0;
  for (const auto& a : next.shared) total += a.weight;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(next.shared[1].weight, m.shared[1].weight);
  EXPECT_EQ(next.shared[2].weight, m.shared[2].weight);
  if (next.shared[0].weight != m.shared[0].weight) {
    EXPECT_NEAR(next.shared[0].weight, 1.0 - m.shared[1].weight - m.shared[2].weight, 1e-12);
  }
}

TEST(MStep, LinearSharedExpertMatchesNormalEquations) {
  auto rng = make_rng(8);
  Dataset data;
  const int n = 400;
  data.x = RowMat(n, 1);
  data.y = Vec(n);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> ux(-3.0, 3.0);
  for (int i = 0; i < n; ++i) {
    data.x(i, 0) = ux(rng);
    data.y[i] = 1.7 * data.x(i, 0) - 0.4 + noise(rng);
  }
  MixingMeasurePair m;
  m.shared = {{1.0, {0.0, 0.0}, 1.0}};
  m.routed = {{0.0, {0.0}, {0.0, 30.0}, 1.0}};
  Responsibilities r{Mat::Zero(n, 2), 1};
  r.r.col(0).setOnes();
  const auto next = m_step(r, data, m, EMConfig{});

  Mat A(n, 2);
  A.col(0) = data.x.col(0);
  A.col(1).setOnes();
  const Vec beta = (A.transpose() * A).ldlt().solve(A.transpose() * data.y);
  EXPECT_NEAR(next.shared[0].params[0], beta[0], 1e-10);
  EXPECT_NEAR(next.shared[0].params[1], beta[1], 1e-10);
  const double sse = (data.y - A * beta).squaredNorm();
  EXPECT_NEAR(next.shared[0].variance, sse / n, 1e-10);
}

TEST(MStep, EmptyComponentIsFrozen) {
  auto rng = make_rng(12);
  const auto m = testing::random_model(rng, 1, 2, 2, ExpertKind::Linear, ExpertKind::Linear,
                                       {GateKind::SoftmaxDense, 0});
  const Dataset data = sample_dataset(m, {50, -3.0, 3.0, 2});
  auto r = e_step(m, data);
  r.r.col(1).setZero();
  for (Eigen::Index i = 0; i < r.r.rows(); ++i) r.r.row(i) /= r.r.row(i).sum();
  const auto next = m_step(r, data, m, EMConfig{});
  EXPECT_EQ(next.shared[1].params, m.shared[1].params);
  EXPECT_EQ(next.shared[1].variance, m.shared[1].variance);
}

TEST(GemProperty, MStepNeverDecreasesLikelihood) {
  auto rng = make_rng(77);
  const ExpertKind kinds[] = {ExpertKind::Linear, ExpertKind::GeluOuterInnerBias,
                              ExpertKind::GeluOuterInner};
  const Gating gates[] = {{GateKind::SoftmaxDense, 0}, {GateKind::NormalizedSigmoid, 0},
                          {GateKind::SoftmaxTopK, 2}};
  for (int t = 0; t < 100; ++t) {
    const auto truth = testing::random_model(rng, 1, 1, 2, kinds[t % 3], kinds[(t / 3) % 3],
                                             gates[t % 3]);
    const auto start = testing::random_model(rng, 1, 2, 3, kinds[t % 3], kinds[(t / 3) % 3],
                                             gates[t % 3]);
    const Dataset data = sample_dataset(truth, {150, -3.0, 3.0, static_cast<std::uint64_t>(t)});
    EMConfig cfg;
    cfg.inner_steps = 5;
    const auto next = m_step(e_step(start, data), data, start, cfg);
    EXPECT_GE(log_likelihood(next, data), log_likelihood(start, data) - 1e-9) << "pair " << t;
  }
}

TEST(GemProperty, TraceIsNonDecreasing) {
  auto rng = make_rng(31);
  for (int t = 0; t < 10; ++t) {
    const auto truth = testing::random_model(rng, 1, 1, 2, ExpertKind::GeluOuterInnerBias,
                                             ExpertKind::Linear, {GateKind::SoftmaxDense, 0});
    const Dataset data = sample_dataset(truth, {200, -3.0, 3.0, static_cast<std::uint64_t>(t)});
    EMConfig cfg;
    cfg.max_iter = 30;
    cfg.seed = t;
    const auto start = initial_measure(2, 3, truth.shared_family, truth.routed_family,
                                       truth.gating, cfg, 0);
    const auto fit = run_em(data, start, cfg);
    ASSERT_EQ(static_cast<int>(fit.loglik_trace.size()), fit.iterations + 1);
    for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) {
      EXPECT_GE(fit.loglik_trace[i], fit.loglik_trace[i - 1] - 1e-9);
    }
  }
}

TEST(FitMle, SingleGaussianRecoversOlsSolution) {
  MixingMeasurePair truth;
  truth.shared = {{1.0, {0.0, 1.2}, 0.5}};
  truth.routed = {{0.0, {0.0}, {0.0, 1.2}, 0.5}};
  const int n = 2000;
  const Dataset data = sample_dataset(truth, {n, -3.0, 3.0, 17});
  EMConfig cfg;
  cfg.restarts = 2;
  cfg.seed = 3;
  const auto fit = fit_mle(data, 1, 1, truth.shared_family, truth.routed_family, truth.gating, cfg);
  Mat A(n, 2);
  A.col(0) = data.x.col(0);
  A.col(1).setOnes();
  const Vec beta = (A.transpose() * A).ldlt().solve(A.transpose() * data.y);
  // The two halves may split apart, but the fitted regression line is the OLS one.
  for (double x : {-2.0, 0.0, 2.0}) {
    const std::span<const double> xs{&x, 1};
    const double mean = 0.5 * expert_eval(fit.model.shared_family, fit.model.shared[0].params, xs) +
                        0.5 * expert_eval(fit.model.routed_family, fit.model.routed[0].params, xs);
    EXPECT_NEAR(mean, beta[0] * x + beta[1], 5.0 / std::sqrt(n));
  }
}

TEST(FitMle, StartingAtTruthDoesNotLoseLikelihood) {
  const auto truth = testing::theorem_truth(2);
  const Dataset data = sample_dataset(truth, {500, -3.0, 3.0, 5});
  EMConfig cfg;
  cfg.max_iter = 50;
  const auto fit = run_em(data, truth, cfg);
  EXPECT_GE(fit.final_loglik(), log_likelihood(truth, data) - 1e-9);
}

TEST(FitMle, DeterministicGivenSeed) {
  const auto truth = testing::theorem_truth(2);
  const Dataset data = sample_dataset(truth, {200, -3.0, 3.0, 6});
  EMConfig cfg;
  cfg.restarts = 2;
  cfg.max_iter = 40;
  cfg.seed = 11;
  const auto a = fit_mle(data, 2, 3, truth.shared_family, truth.routed_family, truth.gating, cfg);
  const auto b = fit_mle(data, 2, 3, truth.shared_family, truth.routed_family, truth.gating, cfg);
  EXPECT_EQ(a.loglik_trace, b.loglik_trace);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(a.model.shared[i].params, b.model.shared[i].params);
  EXPECT_LE(a.model.shared[0].params, a.model.shared[1].params);
}

TEST(FitMle, TheoremThreeRegressionAnchor) {
  auto cfg = preset_theorem(3);
  const Dataset data = sample_dataset(cfg.truth, {10000, -3.0, 3.0, 2024});
  cfg.em.seed = 1;
  const auto fit = fit_mle(data, 2, 3, cfg.truth.shared_family, cfg.truth.routed_family,
                           cfg.truth.gating, cfg.em);
  EXPECT_LT(loss_d3(fit.model, cfg.truth, assign_voronoi(fit.model, cfg.truth)), 0.5);
}

TEST(FitMle, TopKBoundFlagged) {
  MixingMeasurePair truth;
  truth.gating = {GateKind::SoftmaxTopK, 1};
  truth.shared = {{1.0, {0.0, 0.0}, 0.5}};
  truth.routed = {{0.0, {1.0}, {2.0, 0.0}, 0.5}, {0.0, {-1.0}, {-2.0, 0.0}, 0.5}};
  FitResult fit;
  fit.model = truth;
  fit.model.routed.push_back(truth.routed[0]);
  fit.model.routed.back().params[1] = 0.05;
  EXPECT_EQ(topk_required(fit.model, truth), 2);
  EXPECT_TRUE(check_topk_lower_bound(fit, truth));
  EXPECT_TRUE(fit.topk_bound_violated);
  fit.model.gating.top_k = 2;
  EXPECT_FALSE(check_topk_lower_bound(fit, truth));
}

TEST(InitialMeasure, RespectsBoxes) {
  EMConfig cfg;
  cfg.seed = 5;
  cfg.init_box_scale = 0.5;
  const ExpertFamily f{ExpertKind::GeluOuterInnerBias, 2};
  for (int r = 0; r < 5; ++r) {
    const auto m = initial_measure(2, 3, f, f, {GateKind::SoftmaxDense, 0}, cfg, r);
    EXPECT_NO_THROW(m.validate());
    for (const auto& a : m.shared) {
      for (double v : a.params) EXPECT_LE(std::abs(v), 5.0);
      EXPECT_GE(a.variance, 0.05);
      EXPECT_LE(a.variance, 1.0);
    }
    for (const auto& a : m.routed) {
      EXPECT_LE(std::abs(a.bias), 1.0);
      for (double v : a.gate) EXPECT_LE(std::abs(v), 1.0);
    }
  }
}

}  // namespace
}  // namespace dsmoe
