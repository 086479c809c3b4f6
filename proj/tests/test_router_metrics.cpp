// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/router_metrics.hpp"

#include "dsmoe/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

namespace dsmoe {
namespace {

RoutingLog parse(const std::string& text) {
  std::istringstream in(text);
  return parse_routing_log(in);
}

TEST(Parse, RowFormat) {
  const auto log = parse("checkpoint,token,experts\n3,17,1|5|8|9\n");
  EXPECT_EQ(log.k, 4);
  EXPECT_EQ(log.sets[0][0], (ExpertSet{1, 5, 8, 9}));
  EXPECT_EQ(log.checkpoints, std::vector<std::int64_t>{3});
  EXPECT_EQ(log.tokens, std::vector<std::int64_t>{17});
  EXPECT_EQ(log.num_experts, 10);
}

TEST(Parse, Errors) {
  EXPECT_THROW(parse("1,1,1|1|2|3\n"), std::runtime_error);
  try {
    parse("");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos);
  }
  EXPECT_THROW(parse("1,1,1|2\n1,2,3\n"), std::runtime_error);
  EXPECT_THROW(parse("1,1,1|2\n1,1,3|4\n"), std::runtime_error);
  EXPECT_THROW(parse("1,1,1|2\n2,2,3|4\n"), std::runtime_error);
  EXPECT_THROW(parse("1,x,1|2\n"), std::runtime_error);
}

TEST(Parse, OptionalWeights) {
  const auto log = parse("1,0,0|2,0.75|0.25\n1,1,1|2,0.5|0.5\n");
  ASSERT_TRUE(log.has_weights());
  const auto tokens = utilization(log, 1, UtilizationMode::Tokens);
  const auto weight = utilization(log, 1, UtilizationMode::Weight);
  EXPECT_EQ(tokens, (std::vector<double>{0.25, 0.25, 0.5}));
  EXPECT_EQ(weight, (std::vector<double>{0.375, 0.25, 0.375}));
}

TEST(Saturation, Examples) {
  const auto log = parse("1,0,1|2\n2,0,1|3\n3,0,4|5\n");
  EXPECT_EQ(saturation(log, 1, 1), 1.0);
  EXPECT_EQ(saturation(log, 1, 2), 0.5);
  EXPECT_EQ(saturation(log, 1, 3), 0.0);
  EXPECT_THROW(saturation(log, 1, 9), std::invalid_argument);
}

TEST(ChangeRate, Examples) {
  const auto same = parse("1,0,1|2\n2,0,1|2\n");
  EXPECT_EQ(change_rate(same, 1), 0.0);
  const auto disjoint = parse("1,0,1|2\n2,0,3|4\n");
  EXPECT_EQ(change_rate(disjoint, 1), 1.0);
  const auto half = parse("1,0,1|2\n2,0,1|3\n");
  EXPECT_EQ(change_rate(half, 1), 0.5);
  EXPECT_THROW(change_rate(half, 2), std::invalid_argument);
}

TEST(Jain, Examples) {
  const std::vector<double> even{2.5, 2.5, 2.5, 2.5}, one{1, 0, 0}, skew{2, 1, 1};
  EXPECT_EQ(jain_index(even), 1.0);
  EXPECT_EQ(jain_index(one), 1.0 / 3.0);
  EXPECT_EQ(jain_index(skew), 8.0 / 9.0);
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(jain_index(zero), std::invalid_argument);
  const std::vector<double> neg{1, -1};
  EXPECT_THROW(jain_index(neg), std::invalid_argument);
}

TEST(JainProperty, ScaleInvariant) {
  auto rng = make_rng(2);
  std::uniform_real_distribution<double> u(0.0, 5.0), c(0.01, 100.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> r(2 + t % 30);
    for (auto& v : r) v = u(rng);
    const double j = jain_index(r);
    const double s = c(rng);
    auto scaled = r;
    for (auto& v : scaled) v *= s;
    EXPECT_NEAR(jain_index(scaled), j, 1e-14);
    EXPECT_GE(j, 1.0 / r.size() - 1e-15);
    EXPECT_LE(j, 1.0 + 1e-15);
  }
}

std::string random_log(Rng& rng, int checkpoints, int tokens, int experts, int k,
                       const std::vector<int>& relabel) {
  std::ostringstream out;
  std::vector<int> ids(experts);
  std::iota(ids.begin(), ids.end(), 0);
  for (int c = 0; c < checkpoints; ++c) {
    for (int t = 0; t < tokens; ++t) {
      std::shuffle(ids.begin(), ids.end(), rng);
      out << c * 10 << ',' << t << ',';
      for (int i = 0; i < k; ++i) out << (i ? "|" : "") << relabel[ids[i]];
      out << '\n';
    }
  }
  return out.str();
}

TEST(RouterProperty, ConstantLogAndRelabeling) {
  auto rng = make_rng(8);
  std::vector<int> identity(8), perm(8);
  std::iota(identity.begin(), identity.end(), 0);
  perm = identity;
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::uint64_t seed = 77;
  auto r1 = make_rng(seed);
  auto r2 = make_rng(seed);
  const auto a = parse(random_log(r1, 4, 50, 8, 2, identity));
  const auto b = parse(random_log(r2, 4, 50, 8, 2, perm));
  for (std::int64_t t : a.checkpoints) {
    EXPECT_EQ(saturation(a, t, t), 1.0);
    EXPECT_EQ(saturation(a, t, 30), saturation(b, t, 30));
    if (t != 30) EXPECT_EQ(change_rate(a, t), change_rate(b, t));
  }
  auto r3 = make_rng(5);
  const std::string one = random_log(r3, 1, 20, 6, 3, identity);
  std::string constant;
  for (int c = 0; c < 3; ++c) {
    std::istringstream lines(one);
    std::string line;
    while (std::getline(lines, line)) constant += std::to_string(c) + line.substr(line.find(',')) + "\n";
  }
  const auto flat = parse(constant);
  EXPECT_EQ(change_rate(flat, 0), 0.0);
  EXPECT_EQ(change_rate(flat, 1), 0.0);
}

}  // namespace
}  // namespace dsmoe
