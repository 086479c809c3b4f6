// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <vector>

namespace dsmoe {

using ParamList = std::vector<std::vector<double>>;

/// Conditioning of the Gram matrix of a function set sampled on a grid.
/// Every function is scaled to unit RMS before the Gram matrix is formed, so
/// `relative` is scale free; it is ~0 when the set is linearly dependent.
struct IdentScore {
  double min_singular = 0.0;
  double max_singular = 0.0;
  int gram_dim = 0;
  int set_index = 0;  // which function set attained the minimum (strong only)

  double relative() const { return max_singular > 0.0 ? min_singular / max_singular : 0.0; }
  bool pass(double threshold = 1e-3) const { return relative() > threshold; }
};

/// n equally spaced points per axis on [lo, hi]^d, endpoints included.
RowMat uniform_grid(int d, double lo, double hi, int points_per_axis);

/// Worst of the three function sets: shared first derivatives (set 0); shared
/// pairwise gradient products plus the constant 1 (set 1); routed first and
/// second derivatives plus x-multiplied first derivatives (set 2).
///
/// By default each set is checked atom by atom. With `pooled` the functions of
/// all atoms go into one Gram matrix, which is a stricter test: it also fails
/// when derivatives of different atoms combine linearly.
IdentScore strong_identifiability_score(const ExpertFamily& shared_family,
                                        const ExpertFamily& routed_family,
                                        const ParamList& shared_params,
                                        const ParamList& routed_params, const RowMat& grid,
                                        bool pooled = false);

/// Routed first derivatives only.
IdentScore weak_identifiability_score(const ExpertFamily& routed_family,
                                      const ParamList& routed_params, const RowMat& grid,
                                      bool pooled = false);

}  // namespace dsmoe
