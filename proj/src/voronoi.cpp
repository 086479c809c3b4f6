// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/voronoi.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace dsmoe {

namespace {

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double norm(std::span<const double> a, std::span<const double> b) { return std::sqrt(dist2(a, b)); }

std::vector<double> xi(const SharedAtom& a) {
  std::vector<double> v = a.params;
  v.push_back(a.variance);
  return v;
}

std::vector<double> zeta(const RoutedAtom& a) {
  std::vector<double> v = a.gate;
  v.insert(v.end(), a.params.begin(), a.params.end());
  v.push_back(a.variance);
  return v;
}

template <typename Atom, typename Key>
Cells nearest_cells(std::span<const Atom> fitted, std::span<const Atom> truth, Key key) {
  if (truth.empty()) throw std::invalid_argument("true measure has no atoms");
  std::vector<std::vector<double>> centers;
  for (const auto& t : truth) centers.push_back(key(t));
  Cells cells(truth.size());
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    const auto v = key(fitted[i]);
    if (v.size() != centers[0].size()) throw std::invalid_argument("atom dimension mismatch");
    std::size_t best = 0;
    double best_d = dist2(v, centers[0]);
    for (std::size_t j = 1; j < centers.size(); ++j) {
      const double dj = dist2(v, centers[j]);
      if (dj < best_d) {
        best = j;
        best_d = dj;
      }
    }
    cells[best].push_back(static_cast<int>(i));
  }
  return cells;
}

void check_pair(const MixingMeasurePair& fitted, const MixingMeasurePair& truth) {
  if (fitted.input_dim != truth.input_dim || fitted.shared_family != truth.shared_family ||
      fitted.routed_family != truth.routed_family) {
    throw std::invalid_argument("fitted and true measures use different families or dimensions");
  }
}

void check_cells(const VoronoiAssignment& c, const MixingMeasurePair& fitted,
                 const MixingMeasurePair& truth) {
  if (static_cast<int>(c.shared_cells.size()) != truth.k1() ||
      static_cast<int>(c.routed_cells.size()) != truth.k2()) {
    throw std::invalid_argument("Voronoi assignment does not match the true measure");
  }
  auto in_range = [](const Cells& cells, int k) {
    for (const auto& cell : cells) {
      for (int i : cell) {
        if (i < 0 || i >= k) return false;
      }
    }
    return true;
  };
  if (!in_range(c.shared_cells, fitted.k1()) || !in_range(c.routed_cells, fitted.k2())) {
    throw std::invalid_argument("Voronoi cell refers to a missing fitted atom");
  }
}

// Weight discrepancy plus first/second order terms for the shared block, as
// shared by D1, D3, D4 and D5.
double shared_block(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
                    const Cells& cells) {
  double loss = 0.0;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto& t = truth.shared[j];
    double mass = 0.0;
    for (int i : cells[j]) mass += fitted.shared[i].weight;
    loss += std::abs(mass - t.weight);
    for (int i : cells[j]) {
      const auto& a = fitted.shared[i];
      const double dk = norm(a.params, t.params);
      const double dt = std::abs(a.variance - t.variance);
      loss += cells[j].size() == 1 ? a.weight * (dk + dt) : a.weight * (dk * dk + dt * dt);
    }
  }
  return loss;
}

// Routed block of D1 restricted to the true atoms listed in `which`.
double routed_block_d1(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
                       const Cells& cells, const std::vector<int>& which) {
  double loss = 0.0;
  for (int j : which) {
    const auto& t = truth.routed[j];
    double mass = 0.0;
    for (int i : cells[j]) mass += std::exp(fitted.routed[i].bias);
    loss += std::abs(mass - std::exp(t.bias));
    for (int i : cells[j]) {
      const auto& a = fitted.routed[i];
      const double db = norm(a.gate, t.gate);
      const double de = norm(a.params, t.params);
      const double dv = std::abs(a.variance - t.variance);
      const double w = std::exp(a.bias);
      loss += cells[j].size() == 1 ? w * (db + de + dv) : w * (db * db + de * de + dv * dv);
    }
  }
  return loss;
}

}  // namespace

Cells assign_routed_cells(std::span<const RoutedAtom> fitted, std::span<const RoutedAtom> truth) {
  return nearest_cells(fitted, truth, zeta);
}

VoronoiAssignment assign_voronoi(const MixingMeasurePair& fitted, const MixingMeasurePair& truth) {
  check_pair(fitted, truth);
  return {nearest_cells(std::span<const SharedAtom>(fitted.shared),
                        std::span<const SharedAtom>(truth.shared), xi),
          assign_routed_cells(fitted.routed, truth.routed)};
}

RateExponent r1_exponent(int m) {
  if (m < 1) throw std::invalid_argument("cell size must be positive");
  if (m == 1) return {1, true};
  if (m == 2) return {4, true};
  if (m == 3) return {6, true};
  return {7, false};
}

RateExponent r2_exponent(int m) { return r1_exponent(m); }

double loss_d1(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells) {
  check_pair(fitted, truth);
  check_cells(cells, fitted, truth);
  std::vector<int> all(truth.k2());
  for (int j = 0; j < truth.k2(); ++j) all[j] = j;
  return shared_block(fitted, truth, cells.shared_cells) +
         routed_block_d1(fitted, truth, cells.routed_cells, all);
}

double loss_d2(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells) {
  check_pair(fitted, truth);
  if (truth.shared_family.kind != ExpertKind::Linear ||
      truth.routed_family.kind != ExpertKind::Linear) {
    throw std::invalid_argument("loss d2: linear family required for both experts");
  }
  check_cells(cells, fitted, truth);
  const int d = truth.input_dim;
  auto slope = [d](const std::vector<double>& p) { return std::span<const double>(p.data(), d); };
  double loss = 0.0;

  for (int j = 0; j < truth.k1(); ++j) {
    const auto& t = truth.shared[j];
    const auto& cell = cells.shared_cells[j];
    double mass = 0.0;
    for (int i : cell) mass += fitted.shared[i].weight;
    loss += std::abs(mass - t.weight);
    for (int i : cell) {
      const auto& a = fitted.shared[i];
      const double d1 = norm(slope(a.params), slope(t.params));
      const double d0 = std::abs(a.params[d] - t.params[d]);
      const double dt = std::abs(a.variance - t.variance);
      if (cell.size() == 1) {
        loss += a.weight * (d1 + d0 + dt);
      } else {
        const double r = r1_exponent(static_cast<int>(cell.size())).value;
        loss += a.weight * (d1 * d1 + std::pow(d0, r) + std::pow(dt, r / 2.0));
      }
    }
  }

  for (int j = 0; j < truth.k2(); ++j) {
    const auto& t = truth.routed[j];
    const auto& cell = cells.routed_cells[j];
    double mass = 0.0;
    for (int i : cell) mass += std::exp(fitted.routed[i].bias);
    loss += std::abs(mass - std::exp(t.bias));
    for (int i : cell) {
      const auto& a = fitted.routed[i];
      const double w = std::exp(a.bias);
      const double db = norm(a.gate, t.gate);
      const double d1 = norm(slope(a.params), slope(t.params));
      const double d0 = std::abs(a.params[d] - t.params[d]);
      const double dv = std::abs(a.variance - t.variance);
      if (cell.size() == 1) {
        loss += w * (db + d1 + d0 + dv);
      } else {
        const double r = r2_exponent(static_cast<int>(cell.size())).value;
        loss += w * (std::pow(db, r) + std::pow(d1, r / 2.0) + std::pow(d0, r) +
                     std::pow(dv, r / 2.0));
      }
    }
  }
  return loss;
}

double loss_d3(const MixingMeasurePair& fitted, const MixingMeasurePair& truth,
               const VoronoiAssignment& cells) {
  check_pair(fitted, truth);
  check_cells(cells, fitted, truth);
  double loss = shared_block(fitted, truth, cells.shared_cells);
  for (int j = 0; j < truth.k2(); ++j) {
    const auto& t = truth.routed[j];
    const auto& cell = cells.routed_cells[j];
    if (cell.size() > 1) {
      double mass = 0.0;
      for (int i : cell) mass += sigmoid(fitted.routed[i].bias);
      loss += std::abs(mass - sigmoid(t.bias));
    }
    for (int i : cell) {
      const auto& a = fitted.routed[i];
      const double db = norm(a.gate, t.gate);
      const double de = norm(a.params, t.params);
      const double dv = std::abs(a.variance - t.variance);
      if (cell.size() == 1) {
        loss += db + std::abs(a.bias - t.bias) + de + dv;
      } else {
        loss += db * db + de * de + dv * dv;
      }
    }
  }
  return loss;
}

double loss_d4(const MixingMeasurePair& fitted, const MixingMeasurePair& truth_shared,
               std::span<const RoutedAtom> reference_routed) {
  check_pair(fitted, truth_shared);
  if (reference_routed.empty()) throw std::invalid_argument("loss d4: empty routed reference");
  const auto shared_cells = nearest_cells(std::span<const SharedAtom>(fitted.shared),
                                          std::span<const SharedAtom>(truth_shared.shared), xi);
  const auto routed_cells = assign_routed_cells(fitted.routed, reference_routed);
  double loss = shared_block(fitted, truth_shared, shared_cells);
  for (std::size_t j = 0; j < reference_routed.size(); ++j) {
    const auto& t = reference_routed[j];
    for (int i : routed_cells[j]) {
      const auto& a = fitted.routed[i];
      loss += norm(a.gate, t.gate) + std::abs(a.bias - t.bias) + norm(a.params, t.params) +
              std::abs(a.variance - t.variance);
    }
  }
  return loss;
}

double loss_d5(const MixingMeasurePair& fitted, const MixingMeasurePair& truth, int K) {
  check_pair(fitted, truth);
  if (K < 1 || K > truth.k2()) throw std::invalid_argument("loss d5: K must lie in [1, k2*]");
  const auto cells = assign_voronoi(fitted, truth);
  const double shared = shared_block(fitted, truth, cells.shared_cells);
  double best = 0.0;
  std::vector<int> subset;
  std::function<void(int)> visit = [&](int start) {
    if (static_cast<int>(subset.size()) == K) {
      best = std::max(best, routed_block_d1(fitted, truth, cells.routed_cells, subset));
      return;
    }
    for (int j = start; j < truth.k2(); ++j) {
      subset.push_back(j);
      visit(j + 1);
      subset.pop_back();
    }
  };
  visit(0);
  return shared + best;
}

}  // namespace dsmoe
