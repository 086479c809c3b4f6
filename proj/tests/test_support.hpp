// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/bench.hpp"
#include "dsmoe/core_model.hpp"
#include "dsmoe/rng.hpp"

#include <random>

namespace dsmoe::testing {

inline double normal_pdf(double y, double mean, double var) {
  const double z = y - mean;
  return std::exp(-0.5 * z * z / var) / std::sqrt(2.0 * M_PI * var);
}

inline MixingMeasurePair theorem_truth(int which) { return preset_theorem(which).truth; }

inline std::vector<double> uniform_vec(Rng& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Random valid model; expert parameters kept moderate so densities stay finite.
inline MixingMeasurePair random_model(Rng& rng, int d, int k1, int k2, ExpertKind shared,
                                      ExpertKind routed, Gating gating) {
  MixingMeasurePair m;
  m.input_dim = d;
  m.gating = gating;
  m.shared_family = {shared, d};
  m.routed_family = {routed, d};
  std::uniform_real_distribution<double> u(0.2, 1.0);
  double total = 0.0;
  for (int i = 0; i < k1; ++i) {
    SharedAtom a;
    a.weight = u(rng);
    total += a.weight;
    a.params = uniform_vec(rng, m.shared_family.param_dim(), -3.0, 3.0);
    a.variance = u(rng);
    m.shared.push_back(a);
  }
  for (auto& a : m.shared) a.weight /= total;
  for (int i = 0; i < k2; ++i) {
    RoutedAtom a;
    a.bias = uniform_vec(rng, 1, -1.0, 1.0)[0];
    a.gate = uniform_vec(rng, d, -2.0, 2.0);
    a.params = uniform_vec(rng, m.routed_family.param_dim(), -3.0, 3.0);
    a.variance = u(rng);
    m.routed.push_back(a);
  }
  return m;
}

}  // namespace dsmoe::testing
