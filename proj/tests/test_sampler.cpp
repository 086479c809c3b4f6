// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/sampler.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace dsmoe {
namespace {

// Mixture moments of Y given x: returns (E[Y], E[Y^2]).
std::pair<double, double> conditional_moments(const MixingMeasurePair& m, double x) {
  const std::span<const double> xs{&x, 1};
  double m1 = 0.0, m2 = 0.0;
  for (const auto& a : m.shared) {
    const double mu = expert_eval(m.shared_family, a.params, xs);
    m1 += 0.5 * a.weight * mu;
    m2 += 0.5 * a.weight * (mu * mu + a.variance);
  }
  const Vec g = gate_weights(m.gating, m.routed, xs);
  for (int j = 0; j < m.k2(); ++j) {
    const auto& a = m.routed[j];
    const double mu = expert_eval(m.routed_family, a.params, xs);
    m1 += 0.5 * g[j] * mu;
    m2 += 0.5 * g[j] * (mu * mu + a.variance);
  }
  return {m1, m2};
}

double ks_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = (v[i] - lo) / (hi - lo);
    d = std::max({d, std::abs((i + 1) / n - f), std::abs(f - i / n)});
  }
  return d;
}

TEST(Sampler, InputsPassKolmogorovSmirnov) {
  const auto m = testing::theorem_truth(1);
  const Dataset data = sample_dataset(m, {10000, -3.0, 3.0, 42});
  std::vector<double> xs(data.x.data(), data.x.data() + data.size());
  EXPECT_LT(ks_uniform(xs, -3.0, 3.0), 1.628 / std::sqrt(10000.0));
  EXPECT_GE(*std::min_element(xs.begin(), xs.end()), -3.0);
  EXPECT_LT(*std::max_element(xs.begin(), xs.end()), 3.0);
}

TEST(Sampler, CollapsedModelHasSingleGaussianMarginal) {
  MixingMeasurePair m;
  m.shared_family = m.routed_family = {ExpertKind::Linear, 1};
  m.shared = {{1.0, {0.0, 1.5}, 0.3}};
  m.routed = {{0.0, {0.0}, {0.0, 1.5}, 0.3}};
  const int n = 20000;
  const Dataset data = sample_dataset(m, {n, -3.0, 3.0, 1});
  EXPECT_NEAR(data.y.mean(), 1.5, 4.0 * std::sqrt(0.3) / std::sqrt(n));
}

TEST(Sampler, TheoremOneConditionalMeanNearZero) {
  const auto m = testing::theorem_truth(1);
  EXPECT_NEAR(conditional_moments(m, 0.0).first, 0.0, 1e-12);
  const Dataset data = sample_dataset(m, {50000, -3.0, 3.0, 7});
  std::vector<double> ys;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (std::abs(data.x(i, 0)) < 0.1) ys.push_back(data.y[i]);
  }
  ASSERT_GT(ys.size(), 500u);
  double mean = 0.0, sq = 0.0;
  for (double y : ys) mean += y;
  mean /= ys.size();
  for (double y : ys) sq += (y - mean) * (y - mean);
  const double se = std::sqrt(sq / (ys.size() - 1) / ys.size());
  // The conditional mean is not odd in x, so compare with its average over the window.
  double window = 0.0;
  const int steps = 2000;
  for (int k = 0; k < steps; ++k) window += conditional_moments(m, -0.1 + 0.2 * (k + 0.5) / steps).first;
  window /= steps;
  EXPECT_LT(std::abs(mean - window), 3.0 * se);
}

TEST(SamplerProperty, ConditionalSecondMomentAtProbePoints) {
  for (int which = 1; which <= 4; ++which) {
    const auto m = testing::theorem_truth(which);
    for (double p : {-2.0, -0.7, 0.0, 0.9, 2.4}) {
      const int n = 20000;
      const Dataset data = sample_dataset(m, {n, p - 1e-7, p + 1e-7, derive_seed(3, {static_cast<std::uint64_t>(which)})});
      const Vec y2 = data.y.array().square();
      const double mean = y2.mean();
      const double sd = std::sqrt((y2.array() - mean).square().sum() / (n - 1));
      EXPECT_NEAR(mean, conditional_moments(m, p).second, 3.0 * sd / std::sqrt(n))
          << "theorem " << which << " x=" << p;
    }
  }
}

TEST(Sampler, SameSeedIsBitIdentical) {
  const auto m = testing::theorem_truth(3);
  const Dataset a = sample_dataset(m, {500, -3.0, 3.0, 99});
  const Dataset b = sample_dataset(m, {500, -3.0, 3.0, 99});
  const Dataset c = sample_dataset(m, {500, -3.0, 3.0, 100});
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_NE(a.y, c.y);
}

TEST(Sampler, RejectsBadConfig) {
  const auto m = testing::theorem_truth(1);
  EXPECT_THROW(sample_dataset(m, {0, -3.0, 3.0, 0}), std::invalid_argument);
  EXPECT_THROW(sample_dataset(m, {10, 1.0, 1.0, 0}), std::invalid_argument);
}

TEST(Sampler, CsvRoundTripIsExact) {
  auto m = testing::theorem_truth(2);
  const Dataset a = sample_dataset(m, {300, -3.0, 3.0, 5});
  const auto path = std::filesystem::temp_directory_path() / "dsmoe_sampler_roundtrip.csv";
  write_dataset_csv(a, path);
  const Dataset b = read_dataset_csv(path);
  std::filesystem::remove(path);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
}

TEST(Sampler, CsvHeaderChecked) {
  const auto path = std::filesystem::temp_directory_path() / "dsmoe_sampler_bad.csv";
  {
    std::ofstream f(path);
    f << "a,b\n1,2\n";
  }
  EXPECT_THROW(read_dataset_csv(path), std::invalid_argument);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dsmoe
