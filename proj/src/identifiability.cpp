// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/identifiability.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmoe {

namespace {

constexpr double kZeroRms = 1e-13;
constexpr double kCollinear = 1e-12;

struct FunctionSet {
  std::vector<Vec> columns;
};

double rms(const Vec& v) { return std::sqrt(v.squaredNorm() / static_cast<double>(v.size())); }

void check_distinct(const ExpertFamily& fam, const ParamList& params, const char* what) {
  if (params.empty()) throw std::invalid_argument(std::string(what) + " parameter list is empty");
  for (const auto& p : params) {
    if (static_cast<int>(p.size()) != fam.param_dim()) {
      throw std::invalid_argument(std::string(what) + " parameter has wrong length");
    }
  }
  for (std::size_t a = 0; a < params.size(); ++a) {
    for (std::size_t b = a + 1; b < params.size(); ++b) {
      double s = 0.0;
      for (std::size_t u = 0; u < params[a].size(); ++u) {
        s += (params[a][u] - params[b][u]) * (params[a][u] - params[b][u]);
      }
      if (std::sqrt(s) <= 1e-6) {
        throw std::invalid_argument(std::string(what) + " parameters must be distinct");
      }
    }
  }
}

// Per-point gradients and Hessians of one atom over the grid.
struct AtomDerivs {
  std::vector<Vec> grad;  // one column per parameter, sampled on the grid
  std::vector<std::vector<Vec>> hess;
};

AtomDerivs sample_derivs(const ExpertFamily& fam, const std::vector<double>& p, const RowMat& grid,
                         bool second) {
  const int k = fam.param_dim();
  const auto n = grid.rows();
  AtomDerivs out;
  out.grad.assign(k, Vec(n));
  if (second) out.hess.assign(k, std::vector<Vec>(k, Vec(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::span<const double> x(grid.data() + i * grid.cols(), grid.cols());
    const Vec g = expert_grad(fam, p, x);
    for (int u = 0; u < k; ++u) out.grad[u][i] = g[u];
    if (second) {
      const Mat h = expert_hessian(fam, p, x);
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) out.hess[u][v][i] = h(u, v);
      }
    }
  }
  return out;
}

bool collinear(const Vec& a, const Vec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return false;
  return 1.0 - std::abs(a.dot(b)) / (na * nb) < kCollinear;
}

IdentScore score_set(const FunctionSet& set, Eigen::Index grid_points) {
  std::vector<Vec> cols;
  for (const auto& c : set.columns) {
    if (rms(c) > kZeroRms) cols.push_back(c / rms(c));
  }
  if (cols.empty()) return {};
  if (grid_points < 4 * static_cast<Eigen::Index>(cols.size())) {
    throw std::invalid_argument("grid needs at least 4 points per function (" +
                                std::to_string(4 * cols.size()) + ")");
  }
  Mat f(grid_points, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) f.col(static_cast<Eigen::Index>(c)) = cols[c];
  const Mat gram = f.transpose() * f / static_cast<double>(grid_points);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(gram, Eigen::EigenvaluesOnly);
  IdentScore s;
  s.min_singular = std::max(eig.eigenvalues().minCoeff(), 0.0);
  s.max_singular = eig.eigenvalues().maxCoeff();
  s.gram_dim = static_cast<int>(cols.size());
  return s;
}

}  // namespace

RowMat uniform_grid(int d, double lo, double hi, int points_per_axis) {
  if (d < 1 || points_per_axis < 2 || !(lo < hi)) throw std::invalid_argument("invalid grid");
  Eigen::Index total = 1;
  for (int u = 0; u < d; ++u) total *= points_per_axis;
  RowMat g(total, d);
  for (Eigen::Index i = 0; i < total; ++i) {
    Eigen::Index rest = i;
    for (int u = 0; u < d; ++u) {
      g(i, u) = lo + (hi - lo) * static_cast<double>(rest % points_per_axis) / (points_per_axis - 1);
      rest /= points_per_axis;
    }
  }
  return g;
}

IdentScore strong_identifiability_score(const ExpertFamily& shared_family,
                                        const ExpertFamily& routed_family,
                                        const ParamList& shared_params,
                                        const ParamList& routed_params, const RowMat& grid,
                                        bool pooled) {
  check_distinct(shared_family, shared_params, "shared");
  check_distinct(routed_family, routed_params, "routed");
  if (grid.cols() != shared_family.input_dim || grid.cols() != routed_family.input_dim) {
    throw std::invalid_argument("grid dimension does not match the expert families");
  }
  const auto n = grid.rows();
  // Set 0: shared first derivatives. Set 1: shared products and the constant.
  // Set 2: routed first and second derivatives and x-multiplied gradients.
  std::vector<FunctionSet> sets;
  std::vector<int> kinds;
  auto open = [&](int kind, bool per_atom) -> FunctionSet& {
    if (per_atom || sets.size() < 3) {
      sets.emplace_back();
      kinds.push_back(kind);
      if (kind == 1) sets.back().columns.push_back(Vec::Ones(n));
    }
    return sets[per_atom ? sets.size() - 1 : static_cast<std::size_t>(kind)];
  };
  if (pooled) {
    for (int kind = 0; kind < 3; ++kind) open(kind, true);
  }

  for (const auto& p : shared_params) {
    const auto dv = sample_derivs(shared_family, p, grid, false);
    const int k = shared_family.param_dim();
    FunctionSet& first = open(0, !pooled);
    for (int u = 0; u < k; ++u) first.columns.push_back(dv.grad[u]);
    FunctionSet& products = open(1, !pooled);
    for (int u = 0; u < k; ++u) {
      for (int v = u; v < k; ++v) products.columns.push_back(dv.grad[u].cwiseProduct(dv.grad[v]));
    }
  }

  for (const auto& p : routed_params) {
    const auto dv = sample_derivs(routed_family, p, grid, true);
    const int k = routed_family.param_dim();
    FunctionSet& routed = open(2, !pooled);
    for (int u = 0; u < k; ++u) routed.columns.push_back(dv.grad[u]);
    for (int u = 0; u < k; ++u) {
      for (int v = u; v < k; ++v) {
        const Vec& h = dv.hess[u][v];
        // A mixed derivative that only rescales this atom's own gradient
        // (outer weight times inner weight) carries no new direction.
        bool redundant = false;
        for (int w = 0; w < k && !redundant; ++w) redundant = collinear(h, dv.grad[w]);
        if (!redundant) routed.columns.push_back(h);
      }
    }
    for (int c = 0; c < grid.cols(); ++c) {
      for (int v = 0; v < k; ++v) routed.columns.push_back(grid.col(c).cwiseProduct(dv.grad[v]));
    }
  }

  IdentScore worst;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    IdentScore s = score_set(sets[i], n);
    s.set_index = kinds[i];
    if (i == 0 || s.relative() < worst.relative()) worst = s;
  }
  return worst;
}

IdentScore weak_identifiability_score(const ExpertFamily& routed_family,
                                      const ParamList& routed_params, const RowMat& grid,
                                      bool pooled) {
  check_distinct(routed_family, routed_params, "routed");
  if (grid.cols() != routed_family.input_dim) {
    throw std::invalid_argument("grid dimension does not match the expert family");
  }
  std::vector<FunctionSet> sets(pooled ? 1 : routed_params.size());
  for (std::size_t a = 0; a < routed_params.size(); ++a) {
    const auto dv = sample_derivs(routed_family, routed_params[a], grid, false);
    auto& set = sets[pooled ? 0 : a];
    for (const auto& g : dv.grad) set.columns.push_back(g);
  }
  IdentScore worst;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const IdentScore s = score_set(sets[i], grid.rows());
    if (i == 0 || s.relative() < worst.relative()) worst = s;
  }
  return worst;
}

}  // namespace dsmoe
