// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/identifiability.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

namespace dsmoe {
namespace {

ParamList shared_of(const MixingMeasurePair& m) {
  ParamList p;
  for (const auto& a : m.shared) p.push_back(a.params);
  return p;
}

ParamList routed_of(const MixingMeasurePair& m) {
  ParamList p;
  for (const auto& a : m.routed) p.push_back(a.params);
  return p;
}

const ExpertFamily kLinear{ExpertKind::Linear, 1};
const ExpertFamily kGeluBias{ExpertKind::GeluOuterInnerBias, 1};
const ExpertFamily kGelu{ExpertKind::GeluOuterInner, 1};
const ExpertFamily kConstant{ExpertKind::Constant, 1};

TEST(Grid, UniformEndpointsIncluded) {
  const RowMat g = uniform_grid(1, -3.0, 3.0, 512);
  EXPECT_EQ(g.rows(), 512);
  EXPECT_DOUBLE_EQ(g(0, 0), -3.0);
  EXPECT_DOUBLE_EQ(g(511, 0), 3.0);
  EXPECT_EQ(uniform_grid(2, 0.0, 1.0, 5).rows(), 25);
}

TEST(Strong, LinearFamilyFails) {
  const auto t = testing::theorem_truth(2);
  const auto s = strong_identifiability_score(kLinear, kLinear, shared_of(t), routed_of(t),
                                              uniform_grid(1, -3, 3, 512));
  EXPECT_LT(s.relative(), 1e-10);
  EXPECT_FALSE(s.pass());
}

TEST(Strong, SingleGeluAtomFullRankOnOwnDerivatives) {
  const auto w = weak_identifiability_score(kGeluBias, {{-8.0, 6.0, 0.0}},
                                            uniform_grid(1, -3, 3, 512));
  EXPECT_GT(w.relative(), 1e-6);
  EXPECT_EQ(w.gram_dim, 3);
}

TEST(Strong, GeluAtTheoremOneParameters) {
  const auto t = testing::theorem_truth(1);
  const auto s = strong_identifiability_score(kGeluBias, kGelu, shared_of(t), routed_of(t),
                                              uniform_grid(1, -3, 3, 512));
  // Nonsingular in double precision, but far below the 1e-3 heuristic threshold:
  // near-ReLU GELU derivatives make the Gram matrix severely ill-conditioned.
  EXPECT_GT(s.relative(), 1e-14);
  EXPECT_GT(s.gram_dim, 0);
}

TEST(Weak, LinearRoutedPasses) {
  const auto t = testing::theorem_truth(2);
  const auto w = weak_identifiability_score(kLinear, routed_of(t), uniform_grid(1, -3, 3, 512));
  EXPECT_GT(w.relative(), 1e-3);
  EXPECT_TRUE(w.pass());
}

TEST(Weak, ConstantExpertsFail) {
  const auto w = weak_identifiability_score(kConstant, {{1.0, 2.0}, {-0.5, 0.3}},
                                            uniform_grid(1, -3, 3, 512));
  EXPECT_LT(w.relative(), 1e-12);
  EXPECT_FALSE(w.pass());
}

TEST(Weak, GeluRoutedPasses) {
  const auto w = weak_identifiability_score(kGelu, {{1.2, 0.9}, {-0.8, 0.5}},
                                            uniform_grid(1, -3, 3, 512));
  EXPECT_TRUE(w.pass());
}

TEST(Pooled, LinearRoutedDependentAcrossAtoms) {
  const auto t = testing::theorem_truth(2);
  const auto w = weak_identifiability_score(kLinear, routed_of(t), uniform_grid(1, -3, 3, 512), true);
  EXPECT_LT(w.relative(), 1e-10);
}

TEST(IdentProperty, GridDoublingInvariance) {
  const auto lin = testing::theorem_truth(2);
  const auto a = strong_identifiability_score(kLinear, kLinear, shared_of(lin), routed_of(lin),
                                              uniform_grid(1, -3, 3, 512));
  const auto b = strong_identifiability_score(kLinear, kLinear, shared_of(lin), routed_of(lin),
                                              uniform_grid(1, -3, 3, 1024));
  EXPECT_LT(a.relative(), 1e-10);
  EXPECT_LT(b.relative(), 1e-10);
  const auto wa = weak_identifiability_score(kLinear, routed_of(lin), uniform_grid(1, -3, 3, 512));
  const auto wb = weak_identifiability_score(kLinear, routed_of(lin), uniform_grid(1, -3, 3, 1024));
  EXPECT_NEAR(wa.relative(), wb.relative(), 1e-8);
  // Non-trivial scores move with the quadrature rule, by well under one percent.
  const ParamList gp{{1.2, 0.9}, {-0.8, 0.5}};
  const auto ga = weak_identifiability_score(kGelu, gp, uniform_grid(1, -3, 3, 512));
  const auto gb = weak_identifiability_score(kGelu, gp, uniform_grid(1, -3, 3, 1024));
  EXPECT_NEAR(ga.relative(), gb.relative(), 1e-2 * ga.relative());
}

TEST(IdentProperty, StrongPassImpliesWeakPass) {
  auto rng = make_rng(13);
  for (int t = 0; t < 20; ++t) {
    const ParamList sp{testing::uniform_vec(rng, 3, -1.5, 1.5)};
    const ParamList rp{testing::uniform_vec(rng, 2, -1.5, 1.5), testing::uniform_vec(rng, 2, -1.5, 1.5)};
    const auto grid = uniform_grid(1, -3, 3, 256);
    const auto s = strong_identifiability_score(kGeluBias, kGelu, sp, rp, grid);
    const auto w = weak_identifiability_score(kGelu, rp, grid);
    if (s.pass()) EXPECT_TRUE(w.pass());
    EXPECT_GE(w.relative(), 0.0);
  }
}

TEST(Ident, RejectsBadInput) {
  EXPECT_THROW(weak_identifiability_score(kLinear, {{1.0, 2.0}, {1.0, 2.0}},
                                          uniform_grid(1, -3, 3, 64)),
               std::invalid_argument);
  EXPECT_THROW(weak_identifiability_score(kLinear, {{1.0, 2.0}}, uniform_grid(1, -3, 3, 3)),
               std::invalid_argument);
}

}  // namespace
}  // namespace dsmoe
