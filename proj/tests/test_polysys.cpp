// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/polysys.hpp"

#include <gtest/gtest.h>

namespace dsmoe {
namespace {

Vec vars(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(Residual, HandExamples) {
  const SystemInstance one{SystemKind::R1, 1, 1, 1};
  EXPECT_EQ(one.num_vars(), 3);
  EXPECT_EQ(one.num_equations(), 1);
  EXPECT_DOUBLE_EQ(residual(one, vars({0.0, 5.0, 1.0}))[0], 0.0);
  EXPECT_DOUBLE_EQ(residual(one, vars({1.0, 0.0, 1.0}))[0], 1.0);

  const SystemInstance two{SystemKind::R1, 2, 1, 1};
  EXPECT_DOUBLE_EQ(residual(two, vars({1.0, -1.0, 0.0, 0.0, 1.0, 1.0}))[0], 0.0);
}

TEST(Residual, SizesAndValidation) {
  const SystemInstance r2{SystemKind::R2, 2, 3, 1};
  EXPECT_EQ(r2.num_vars(), 10);
  EXPECT_EQ(r2.num_equations(), 9);
  EXPECT_THROW((SystemInstance{SystemKind::R2, 2, 3, 2}.validate()), std::invalid_argument);
  EXPECT_THROW((SystemInstance{SystemKind::R1, 0, 3, 1}.validate()), std::invalid_argument);
  EXPECT_THROW(residual(r2, Vec::Zero(3)), std::invalid_argument);
  EXPECT_EQ(system_kind_from_string("r2"), SystemKind::R2);
  EXPECT_THROW(system_kind_from_string("r3"), std::invalid_argument);
}

TEST(Search, SingleAtomFirstOrderHasNoSolution) {
  const auto res = search_nontrivial({SystemKind::R1, 1, 1, 1}, 50, 1);
  EXPECT_FALSE(res.found);
  EXPECT_EQ(res.restarts, 50);
}

TEST(Search, TwoAtomsOrderThreeSolvable) {
  const SystemInstance sys{SystemKind::R1, 2, 3, 1};
  const auto res = search_nontrivial(sys, 1000, 0);
  ASSERT_TRUE(res.found);
  EXPECT_LT(residual(sys, res.vars).norm(), 1e-8);
  // Non-triviality: some s1 at unit scale, every s3 bounded away from zero.
  EXPECT_NEAR(res.vars.segment(0, 2).cwiseAbs().maxCoeff(), 1.0, 1e-12);
  EXPECT_GE(res.vars.segment(4, 2).cwiseAbs().minCoeff(), 0.1);
  // Nested systems: the same point solves every lower order.
  for (int r = 1; r < 3; ++r) {
    EXPECT_LT(residual({SystemKind::R1, 2, r, 1}, res.vars).norm(), 1e-8);
  }
}

TEST(Search, TwoAtomsOrderFourUnsolvable) {
  const auto res = search_nontrivial({SystemKind::R1, 2, 4, 1}, 200, 0);
  EXPECT_FALSE(res.found);
  EXPECT_GT(res.residual_norm, 1e-8);
}

TEST(Search, SecondSystemTwoAtoms) {
  const SystemInstance solvable{SystemKind::R2, 2, 3, 1};
  const auto res = search_nontrivial(solvable, 300, 4);
  ASSERT_TRUE(res.found);
  EXPECT_LT(residual(solvable, res.vars).norm(), 1e-8);
  EXPECT_GE(res.vars.segment(8, 2).cwiseAbs().minCoeff(), 0.1);
  EXPECT_FALSE(search_nontrivial({SystemKind::R2, 2, 4, 1}, 100, 4).found);
}

TEST(Search, DeterministicGivenSeed) {
  const SystemInstance sys{SystemKind::R1, 2, 3, 1};
  const auto a = search_nontrivial(sys, 30, 9);
  const auto b = search_nontrivial(sys, 30, 9);
  EXPECT_EQ(a.vars, b.vars);
  EXPECT_EQ(a.residual_norm, b.residual_norm);
}

}  // namespace
}  // namespace dsmoe
