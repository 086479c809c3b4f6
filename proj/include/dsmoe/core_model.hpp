// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace dsmoe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Lower bound applied to every Gaussian variance (shared tau, routed nu).
inline constexpr double kVarianceFloor = 1e-6;

// ---------------------------------------------------------------------------
// Expert families
// ---------------------------------------------------------------------------

/// Parameter layouts (d = input dimension):
///   Linear              [slope(d), intercept]                 h = slope.x + intercept
///   GeluOuterInnerBias  [outer, inner(d), bias]               h = outer * GELU(inner.x + bias)
///   GeluOuterInner      [outer, inner(d)]                     h = outer * GELU(inner.x)
///   Constant            [c(d), c0]                            h = sum(c) + c0   (input-free)
enum class ExpertKind { Linear, GeluOuterInnerBias, GeluOuterInner, Constant };

struct ExpertFamily {
  ExpertKind kind = ExpertKind::Linear;
  int input_dim = 1;

  int param_dim() const;
  bool operator==(const ExpertFamily&) const = default;
};

std::string to_string(ExpertKind kind);
ExpertKind expert_kind_from_string(const std::string& name);

/// Exact GELU z * Phi(z) and its first two derivatives.
double gelu(double z);
double gelu_prime(double z);
double gelu_second(double z);

/// Standard normal CDF.
double normal_cdf(double z);

double expert_eval(const ExpertFamily& family, std::span<const double> params,
                   std::span<const double> x);

/// Gradient of expert_eval with respect to params.
Vec expert_grad(const ExpertFamily& family, std::span<const double> params,
                std::span<const double> x);

/// Hessian of expert_eval with respect to params (param_dim x param_dim).
Mat expert_hessian(const ExpertFamily& family, std::span<const double> params,
                   std::span<const double> x);

// ---------------------------------------------------------------------------
// Gating
// ---------------------------------------------------------------------------

enum class GateKind { SoftmaxDense, NormalizedSigmoid, SoftmaxTopK };

struct Gating {
  GateKind kind = GateKind::SoftmaxDense;
  int top_k = 0;  // only meaningful for SoftmaxTopK

  bool operator==(const Gating&) const = default;
};

std::string to_string(const Gating& gating);
/// Parses "softmax", "sigmoid" or "topk:<K>".
Gating gating_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Mixing measures
// ---------------------------------------------------------------------------

/// Atom of the shared measure: weight omega, expert parameters kappa, variance tau.
struct SharedAtom {
  double weight = 1.0;
  std::vector<double> params;
  double variance = 1.0;
};

/// Atom of the routed measure: gate bias beta0, gate vector beta1, expert
/// parameters eta, variance nu.
struct RoutedAtom {
  double bias = 0.0;
  std::vector<double> gate;
  std::vector<double> params;
  double variance = 1.0;
};

struct MixingMeasurePair {
  int input_dim = 1;
  Gating gating;
  ExpertFamily shared_family;
  ExpertFamily routed_family;
  std::vector<SharedAtom> shared;
  std::vector<RoutedAtom> routed;

  int k1() const { return static_cast<int>(shared.size()); }
  int k2() const { return static_cast<int>(routed.size()); }

  /// Throws std::invalid_argument when any structural invariant is broken.
  void validate() const;
};

struct Dataset {
  RowMat x;  // n x d
  Vec y;     // n

  Eigen::Index size() const { return y.size(); }
  int input_dim() const { return static_cast<int>(x.cols()); }
  std::span<const double> row(Eigen::Index i) const {
    return {x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())};
  }
  void validate() const;
};

/// Gate logit beta1.x + beta0 of one routed atom.
double gate_logit(const RoutedAtom& atom, std::span<const double> x);

/// Routing probabilities over the routed atoms at input x.
Vec gate_weights(const Gating& gating, std::span<const RoutedAtom> routed,
                 std::span<const double> x);

/// log of gate_weights; masked Top-K entries are -infinity.
Vec log_gate_weights(const Gating& gating, std::span<const RoutedAtom> routed,
                     std::span<const double> x);

double log_normal_pdf(double y, double mean, double variance);

double conditional_density(const MixingMeasurePair& model, std::span<const double> x,
                           double y);
double log_conditional_density(const MixingMeasurePair& model, std::span<const double> x,
                               double y);

/// Mean log conditional density over the dataset.
double log_likelihood(const MixingMeasurePair& model, const Dataset& data);

/// Numerically stable log(1 / (1 + exp(-z))).
double log_sigmoid(double z);
double sigmoid(double z);

}  // namespace dsmoe
