// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"
#include "dsmoe/em.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dsmoe {

enum class LossKind { D1, D2, D3, D4, D5 };

struct LossSpec {
  LossKind kind = LossKind::D1;
  int K = 0;  // D5 only
};

std::string to_string(const LossSpec& loss);
/// "d1".."d5"; K is supplied separately for d5.
LossSpec loss_from_string(const std::string& name, int K = 0);

/// Adds constants to every gate bias and gate vector of `fitted` so that its
/// routed exp-bias mass and exp-bias-weighted mean gate vector match `truth`.
/// Softmax and Top-K gates are unchanged by this shift; sigmoid gates are
/// returned as is.
MixingMeasurePair align_softmax_gauge(const MixingMeasurePair& fitted,
                                      const MixingMeasurePair& truth);

/// Loss of `fitted` against `truth` (cells re-derived). D4 uses `reference`
/// for the routed block, or truth.routed when empty.
double compute_loss(const LossSpec& loss, const MixingMeasurePair& fitted,
                    const MixingMeasurePair& truth, const std::vector<RoutedAtom>& reference = {});

/// Largest total cell size over K-subsets of true routed atoms; a Top-K fit
/// with fewer active experts cannot cover the over-specified cells.
int topk_required(const MixingMeasurePair& fitted, const MixingMeasurePair& truth);

/// Sets fit.topk_bound_violated when both measures use Top-K gating and the
/// fitted K is below topk_required. Returns the flag.
bool check_topk_lower_bound(FitResult& fit, const MixingMeasurePair& truth);

struct ExperimentConfig {
  MixingMeasurePair truth;
  int fitted_k1 = 2;
  int fitted_k2 = 3;
  LossSpec loss;
  std::vector<Eigen::Index> n_grid;
  int reps = 1;
  EMConfig em;
  std::uint64_t master_seed = 0;
  int threads = 0;  // 0: hardware concurrency
  std::vector<RoutedAtom> d4_reference;  // empty: truth.routed

  void validate() const;
};

struct RunRecord {
  Eigen::Index n = 0;
  int rep = 0;
  double loss = 0.0;  // NaN when the run threw
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double r_squared = 0.0;
};

enum class BenchScale { Desk, Full };

/// n values rounded to integers, log-spaced between lo and hi inclusive.
std::vector<Eigen::Index> log_spaced_grid(double lo, double hi, int count);

/// Ground truth and protocol of the four synthetic experiments (1..4).
ExperimentConfig preset_theorem(int which, BenchScale scale = BenchScale::Desk);

/// One record per (n, rep), ordered by n then rep.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);

/// OLS of log(mean loss at n) on log(n); non-finite losses are skipped.
SlopeFit fit_loglog_slope(const std::vector<RunRecord>& records);

/// Monte-Carlo mean over x ~ U[-3, 3]^d of (1/2) * integral |f_a - f_b| dy
/// on [-y_halfwidth, y_halfwidth].
double tv_distance(const MixingMeasurePair& a, const MixingMeasurePair& b, int n_x,
                   double y_halfwidth, std::uint64_t seed);

/// Header n,rep,loss,loglik,iterations,converged,seed.
void export_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
std::vector<RunRecord> read_records_csv(const std::filesystem::path& path);

/// {truth, fitted_k1, fitted_k2, loss, K, n_grid, reps, master_seed,
///  em:{tol, max_iter, restarts, inner_steps, init_box_scale, init, init_perturbation}}
ExperimentConfig experiment_from_json(const nlohmann::json& j);

}  // namespace dsmoe
