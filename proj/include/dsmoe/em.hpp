// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dsmoe {

/// Numerical M-step blocks (GELU experts, gates): plain steepest ascent, or
/// damped (Gauss-)Newton directions. Both use Armijo backtracking.
enum class MStepSolver { Gradient, Newton };

struct EMConfig {
  double tol = 1e-6;        // stop when |change in mean log-likelihood| < tol
  int max_iter = 1000;
  int restarts = 5;
  int inner_steps = 25;     // max Newton / Gauss-Newton steps per numerical block
  std::uint64_t seed = 0;
  double init_box_scale = 1.0;
  MStepSolver solver = MStepSolver::Gradient;

  /// When set, every restart starts from a perturbed copy of this measure
  /// (fitted atoms are dealt round-robin onto its atoms) instead of the
  /// uniform box.
  std::optional<MixingMeasurePair> init_reference;
  double init_perturbation = 0.1;
};

/// Posterior component probabilities; columns [0, k1) are shared, the rest routed.
struct Responsibilities {
  Mat r;  // n x (k1 + k2)
  int k1 = 0;

  int k2() const { return static_cast<int>(r.cols()) - k1; }
};

struct FitResult {
  MixingMeasurePair model;
  std::vector<double> loglik_trace;  // initial value, then one entry per iteration
  int iterations = 0;
  bool converged = false;
  int restart_index = 0;
  int rejected_blocks = 0;           // M-step blocks reverted by the likelihood guard
  bool topk_bound_violated = false;  // set by check_topk_lower_bound

  double final_loglik() const { return loglik_trace.empty() ? 0.0 : loglik_trace.back(); }
};

/// log(gate weight) for every row of X (n x k2); masked Top-K entries are -inf.
Mat log_gate_matrix(const Gating& gating, std::span<const RoutedAtom> routed, const RowMat& x);

Responsibilities e_step(const MixingMeasurePair& model, const Dataset& data);

/// One generalized M-step. Closed-form updates for weights, linear experts and
/// variances; at most cfg.inner_steps ascent steps (see MStepSolver) for GELU
/// experts and gates. Each block is kept only if the observed-data
/// log-likelihood does not decrease.
MixingMeasurePair m_step(const Responsibilities& resp, const Dataset& data,
                         const MixingMeasurePair& model, const EMConfig& cfg);

/// Single EM run from a given starting measure.
FitResult run_em(const Dataset& data, MixingMeasurePair start, const EMConfig& cfg);

/// Starting measure for restart `restart` (deterministic in cfg.seed).
MixingMeasurePair initial_measure(int k1, int k2, const ExpertFamily& shared_family,
                                  const ExpertFamily& routed_family, const Gating& gating,
                                  const EMConfig& cfg, int restart);

/// Best of cfg.restarts EM runs; shared atoms are returned sorted by kappa.
FitResult fit_mle(const Dataset& data, int k1, int k2, const ExpertFamily& shared_family,
                  const ExpertFamily& routed_family, const Gating& gating, const EMConfig& cfg);

}  // namespace dsmoe
