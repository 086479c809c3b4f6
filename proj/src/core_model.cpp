// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dsmoe {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLog2Pi = 1.83787706640934548356;

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

void check_dims(const ExpertFamily& family, std::span<const double> params,
                std::span<const double> x) {
  if (static_cast<int>(params.size()) != family.param_dim()) {
    throw std::invalid_argument("expert params have length " +
                                std::to_string(params.size()) + ", family " +
                                to_string(family.kind) + " expects " +
                                std::to_string(family.param_dim()));
  }
  if (static_cast<int>(x.size()) != family.input_dim) {
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(family.input_dim));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

int ExpertFamily::param_dim() const {
  switch (kind) {
    case ExpertKind::Linear: return input_dim + 1;
    case ExpertKind::GeluOuterInnerBias: return input_dim + 2;
    case ExpertKind::GeluOuterInner: return input_dim + 1;
    case ExpertKind::Constant: return input_dim + 1;
  }
  return 0;
}

std::string to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::Linear: return "linear";
    case ExpertKind::GeluOuterInnerBias: return "gelu_outer_inner_bias";
    case ExpertKind::GeluOuterInner: return "gelu_outer_inner";
    case ExpertKind::Constant: return "constant";
  }
  return "unknown";
}

ExpertKind expert_kind_from_string(const std::string& name) {
  if (name == "linear") return ExpertKind::Linear;
  if (name == "gelu_outer_inner_bias") return ExpertKind::GeluOuterInnerBias;
  if (name == "gelu_outer_inner") return ExpertKind::GeluOuterInner;
  if (name == "constant") return ExpertKind::Constant;
  throw std::invalid_argument("unknown expert family '" + name + "'");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

double gelu(double z) { return z * normal_cdf(z); }

double gelu_prime(double z) { return normal_cdf(z) + z * normal_pdf(z); }

double gelu_second(double z) { return normal_pdf(z) * (2.0 - z * z); }

double expert_eval(const ExpertFamily& family, std::span<const double> p,
                   std::span<const double> x) {
  check_dims(family, p, x);
  const int d = family.input_dim;
  switch (family.kind) {
    case ExpertKind::Linear: return dot(p.first(d), x) + p[d];
    case ExpertKind::GeluOuterInnerBias: return p[0] * gelu(dot(p.subspan(1, d), x) + p[d + 1]);
    case ExpertKind::GeluOuterInner: return p[0] * gelu(dot(p.subspan(1, d), x));
    case ExpertKind::Constant: {
      double c = 0.0;
      for (double v : p) c += v;
      return c;
    }
  }
  return 0.0;
}

Vec expert_grad(const ExpertFamily& family, std::span<const double> p,
                std::span<const double> x) {
  check_dims(family, p, x);
  const int d = family.input_dim;
  Vec g(family.param_dim());
  switch (family.kind) {
    case ExpertKind::Linear:
      for (int u = 0; u < d; ++u) g[u] = x[u];
      g[d] = 1.0;
      break;
    case ExpertKind::GeluOuterInnerBias:
    case ExpertKind::GeluOuterInner: {
      const bool has_bias = family.kind == ExpertKind::GeluOuterInnerBias;
      const double z = dot(p.subspan(1, d), x) + (has_bias ? p[d + 1] : 0.0);
      const double slope = p[0] * gelu_prime(z);
      g[0] = gelu(z);
      for (int u = 0; u < d; ++u) g[1 + u] = slope * x[u];
      if (has_bias) g[d + 1] = slope;
      break;
    }
    case ExpertKind::Constant: g.setOnes(); break;
  }
  return g;
}

Mat expert_hessian(const ExpertFamily& family, std::span<const double> p,
                   std::span<const double> x) {
  check_dims(family, p, x);
  const int d = family.input_dim;
  Mat h = Mat::Zero(family.param_dim(), family.param_dim());
  if (family.kind != ExpertKind::GeluOuterInnerBias &&
      family.kind != ExpertKind::GeluOuterInner) {
    return h;
  }
  const bool has_bias = family.kind == ExpertKind::GeluOuterInnerBias;
  const double z = dot(p.subspan(1, d), x) + (has_bias ? p[d + 1] : 0.0);
  const double g1 = gelu_prime(z);
  const double g2 = p[0] * gelu_second(z);
  // Derivative of the pre-activation with respect to (inner, bias).
  Vec dz(has_bias ? d + 1 : d);
  for (int u = 0; u < d; ++u) dz[u] = x[u];
  if (has_bias) dz[d] = 1.0;
  const auto m = dz.size();
  h.block(1, 1, m, m) = g2 * dz * dz.transpose();
  h.block(0, 1, 1, m) = g1 * dz.transpose();
  h.block(1, 0, m, 1) = g1 * dz;
  return h;
}

std::string to_string(const Gating& gating) {
  switch (gating.kind) {
    case GateKind::SoftmaxDense: return "softmax";
    case GateKind::NormalizedSigmoid: return "sigmoid";
    case GateKind::SoftmaxTopK: return "topk:" + std::to_string(gating.top_k);
  }
  return "unknown";
}

Gating gating_from_string(const std::string& name) {
  if (name == "softmax") return {GateKind::SoftmaxDense, 0};
  if (name == "sigmoid") return {GateKind::NormalizedSigmoid, 0};
  if (name.rfind("topk:", 0) == 0) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(name.substr(5), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != name.size() - 5 || k < 1) {
      throw std::invalid_argument("malformed gating '" + name + "', expected topk:<K>");
    }
    return {GateKind::SoftmaxTopK, k};
  }
  throw std::invalid_argument("unknown gating '" + name + "'");
}

void MixingMeasurePair::validate() const {
  if (input_dim < 1) throw std::invalid_argument("input_dim must be positive");
  if (shared.empty()) throw std::invalid_argument("at least one shared atom is required");
  if (routed.empty()) throw std::invalid_argument("at least one routed atom is required");
  if (shared_family.input_dim != input_dim || routed_family.input_dim != input_dim) {
    throw std::invalid_argument("expert family input dimension differs from input_dim");
  }
  if (gating.kind == GateKind::SoftmaxTopK && (gating.top_k < 1 || gating.top_k > k2())) {
    throw std::invalid_argument("top-k must lie in [1, number of routed atoms]");
  }
  double total = 0.0;
  for (const auto& a : shared) {
    if (!(a.weight > 0.0) || a.weight > 1.0 + 1e-12) {
      throw std::invalid_argument("shared weights must lie in (0, 1]");
    }
    if (static_cast<int>(a.params.size()) != shared_family.param_dim()) {
      throw std::invalid_argument("shared atom parameter length mismatch");
    }
    if (!(a.variance >= kVarianceFloor)) {
      throw std::invalid_argument("shared variance below floor");
    }
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-12 * static_cast<double>(shared.size()) + 1e-12) {
    throw std::invalid_argument("shared weights must sum to one");
  }
  for (const auto& a : routed) {
    if (static_cast<int>(a.gate.size()) != input_dim) {
      throw std::invalid_argument("routed gate vector length mismatch");
    }
    if (static_cast<int>(a.params.size()) != routed_family.param_dim()) {
      throw std::invalid_argument("routed atom parameter length mismatch");
    }
    if (!(a.variance >= kVarianceFloor)) {
      throw std::invalid_argument("routed variance below floor");
    }
    if (!std::isfinite(a.bias) ||
        !std::all_of(a.gate.begin(), a.gate.end(), [](double v) { return std::isfinite(v); })) {
      throw std::invalid_argument("routed gate parameters must be finite");
    }
  }
}

void Dataset::validate() const {
  if (x.rows() != y.size()) throw std::invalid_argument("X and Y row counts differ");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("dataset has non-finite entries");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double gate_logit(const RoutedAtom& atom, std::span<const double> x) {
  return dot(atom.gate, x) + atom.bias;
}

Vec log_gate_weights(const Gating& gating, std::span<const RoutedAtom> routed,
                     std::span<const double> x) {
  const auto k = static_cast<Eigen::Index>(routed.size());
  if (k == 0) throw std::invalid_argument("gate needs at least one routed atom");
  for (const auto& a : routed) {
    if (a.gate.size() != x.size()) throw std::invalid_argument("gate vector / input dimension mismatch");
  }
  Vec out(k);
  switch (gating.kind) {
    case GateKind::SoftmaxDense: {
      for (Eigen::Index j = 0; j < k; ++j) out[j] = gate_logit(routed[j], x);
      out.array() -= log_sum_exp(out);
      break;
    }
    case GateKind::NormalizedSigmoid: {
      for (Eigen::Index j = 0; j < k; ++j) out[j] = log_sigmoid(gate_logit(routed[j], x));
      out.array() -= log_sum_exp(out);
      break;
    }
    case GateKind::SoftmaxTopK: {
      if (gating.top_k < 1 || gating.top_k > k) {
        throw std::invalid_argument("top-k must lie in [1, number of routed atoms]");
      }
      // Experts are ranked by beta1.x alone; beta0 is added after selection.
      std::vector<std::pair<double, Eigen::Index>> score(k);
      for (Eigen::Index j = 0; j < k; ++j) score[j] = {dot(routed[j].gate, x), j};
      std::stable_sort(score.begin(), score.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      out.setConstant(-std::numeric_limits<double>::infinity());
      for (int r = 0; r < gating.top_k; ++r) {
        const auto j = score[r].second;
        out[j] = gate_logit(routed[j], x);
      }
      out.array() -= log_sum_exp(out);
      break;
    }
  }
  return out;
}

Vec gate_weights(const Gating& gating, std::span<const RoutedAtom> routed,
                 std::span<const double> x) {
  // Scalar exp: the vectorised one clamps -inf to a denormal instead of 0.
  return log_gate_weights(gating, routed, x).unaryExpr([](double v) { return std::exp(v); });
}

double log_normal_pdf(double y, double mean, double variance) {
  const double r = y - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + r * r / variance);
}

double log_conditional_density(const MixingMeasurePair& model, std::span<const double> x,
                               double y) {
  const int k1 = model.k1();
  const int k2 = model.k2();
  Vec terms(k1 + k2);
  for (int i = 0; i < k1; ++i) {
    const auto& a = model.shared[i];
    terms[i] = std::log(0.5 * a.weight) +
               log_normal_pdf(y, expert_eval(model.shared_family, a.params, x), a.variance);
  }
  const Vec lg = log_gate_weights(model.gating, model.routed, x);
  for (int j = 0; j < k2; ++j) {
    const auto& a = model.routed[j];
    terms[k1 + j] = std::isfinite(lg[j])
                        ? std::log(0.5) + lg[j] +
                              log_normal_pdf(y, expert_eval(model.routed_family, a.params, x),
                                             a.variance)
                        : lg[j];
  }
  return log_sum_exp(terms);
}

double conditional_density(const MixingMeasurePair& model, std::span<const double> x,
                           double y) {
  return std::exp(log_conditional_density(model, x, y));
}

double log_likelihood(const MixingMeasurePair& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("log_likelihood of an empty dataset");
  if (data.input_dim() != model.input_dim) {
    throw std::invalid_argument("dataset input dimension differs from the model");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    total += log_conditional_density(model, data.row(i), data.y[i]);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace dsmoe
