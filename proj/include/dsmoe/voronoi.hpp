// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <span>
#include <vector>

namespace dsmoe {

using Cells = std::vector<std::vector<int>>;

/// Fitted atom indices grouped by nearest true atom.
struct VoronoiAssignment {
  Cells shared_cells;  // one entry per true shared atom
  Cells routed_cells;  // one entry per true routed atom
};

/// Shared atoms are compared on (kappa, tau), routed atoms on (beta1, eta, nu).
/// Ties go to the lower true index.
VoronoiAssignment assign_voronoi(const MixingMeasurePair& fitted, const MixingMeasurePair& truth);
Cells assign_routed_cells(std::span<const RoutedAtom> fitted, std::span<const RoutedAtom> truth);

struct RateExponent {
  int value = 1;
  bool is_exact = true;  // false for m >= 4, where only a lower bound is known
};

/// r1(m), r2(m): 1, 4, 6 for m = 1, 2, 3; 7 (lower-bound proxy) beyond.
RateExponent r1_exponent(int m);
RateExponent r2_exponent(int m);

double loss_d1(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells);

/// Linear experts only; throws std::invalid_argument otherwise.
double loss_d2(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells);

double loss_d3(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells);

/// Shared block as in D1; routed atoms are matched on (beta1, eta, nu) to the
/// nearest reference atom and contribute unweighted first-order distances.
double loss_d4(const MixingMeasurePair& fitted, const MixingMeasurePair& truth_shared,
               std::span<const RoutedAtom> reference_routed);

/// Maximum over K-subsets of true routed atoms of the D1-style loss.
double loss_d5(const MixingMeasurePair& fitted, const MixingMeasurePair& truth, int K);

}  // namespace dsmoe
