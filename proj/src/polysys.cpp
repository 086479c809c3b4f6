// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/polysys.hpp"

#include "dsmoe/rng.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dsmoe {

namespace {

constexpr double kFloor = 0.1;
constexpr double kFoundTol = 1e-8;
constexpr int kIterations = 200;

double inv_factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return 1.0 / f;
}

// P_l(a, b) = sum over n1 + 2 n2 = l of a^n1 b^n2 / (n1! n2!).
double r1_poly(int l, double a, double b) {
  double s = 0.0;
  for (int n2 = 0; 2 * n2 <= l; ++n2) {
    const int n1 = l - 2 * n2;
    s += std::pow(a, n1) * std::pow(b, n2) * inv_factorial(n1) * inv_factorial(n2);
  }
  return s;
}

// Maps the free optimizer vector z to the full variable vector. One coordinate
// of s1 (t4) is pinned to 1 and every s3 (t5) is 0.1 + u^2.
struct Param {
  const SystemInstance& sys;
  int pinned;

  int blocks() const { return sys.kind == SystemKind::R1 ? 3 : 5; }
  int pin_block() const { return sys.kind == SystemKind::R1 ? 0 : 3; }
  int free_dim() const { return blocks() * sys.m - 1; }

  Vec full(const Vec& z) const {
    const int m = sys.m;
    Vec v(blocks() * m);
    const int pin = pin_block() * m + pinned;
    for (int k = 0, u = 0; k < v.size(); ++k) {
      if (k == pin) {
        v[k] = 1.0;
        continue;
      }
      const double zk = z[u++];
      v[k] = k >= (blocks() - 1) * m ? kFloor + zk * zk : zk;
    }
    return v;
  }
};

// Rescales along the homogeneity direction so max |s1| (max |t4|) is 1.
Vec normalize(const SystemInstance& sys, Vec v) {
  const int m = sys.m;
  if (sys.kind == SystemKind::R1) {
    const double lam = 1.0 / v.head(m).cwiseAbs().maxCoeff();
    v.head(m) *= lam;
    v.segment(m, m) *= lam * lam;
  } else {
    const double lam = 1.0 / std::sqrt(v.segment(3 * m, m).cwiseAbs().maxCoeff());
    v.segment(m, 2 * m) *= lam;
    v.segment(3 * m, m) *= lam * lam;
  }
  return v;
}

Mat jacobian(const Param& p, const Vec& z, const Vec& r0) {
  Mat j(r0.size(), z.size());
  Vec zp = z;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double h = 1e-7 * (1.0 + std::abs(z[k]));
    zp[k] = z[k] + h;
    const Vec rp = residual(p.sys, p.full(zp));
    zp[k] = z[k] - h;
    const Vec rm = residual(p.sys, p.full(zp));
    zp[k] = z[k];
    j.col(k) = (rp - rm) / (2.0 * h);
  }
  return j;
}

}  // namespace

int SystemInstance::num_vars() const { return (kind == SystemKind::R1 ? 3 : 5) * m; }

int SystemInstance::num_equations() const {
  if (kind == SystemKind::R1) return r;
  return (r + 1) * (r + 2) / 2 - 1;
}

void SystemInstance::validate() const {
  if (m < 1 || r < 1) throw std::invalid_argument("polynomial system needs m >= 1 and r >= 1");
  if (kind == SystemKind::R2 && d != 1) {
    throw std::invalid_argument("r2 system is implemented for d = 1 only");
  }
}

SystemKind system_kind_from_string(const std::string& name) {
  if (name == "r1") return SystemKind::R1;
  if (name == "r2") return SystemKind::R2;
  throw std::invalid_argument("unknown system '" + name + "' (expected r1 or r2)");
}

Vec residual(const SystemInstance& sys, const Vec& vars) {
  sys.validate();
  if (vars.size() != sys.num_vars()) {
    throw std::invalid_argument("expected " + std::to_string(sys.num_vars()) + " variables, got " +
                                std::to_string(vars.size()));
  }
  const int m = sys.m;
  Vec out = Vec::Zero(sys.num_equations());
  if (sys.kind == SystemKind::R1) {
    for (int l = 1; l <= sys.r; ++l) {
      for (int i = 0; i < m; ++i) {
        const double s3 = vars[2 * m + i];
        out[l - 1] += s3 * s3 * r1_poly(l, vars[i], vars[m + i]);
      }
    }
    return out;
  }
  int e = 0;
  for (int total = 1; total <= sys.r; ++total) {
    for (int l1 = 0; l1 <= total; ++l1) {
      const int l2 = total - l1;
      for (int i = 0; i < m; ++i) {
        const double t1 = vars[i], t2 = vars[m + i], t3 = vars[2 * m + i];
        const double t4 = vars[3 * m + i], t5 = vars[4 * m + i];
        double s = 0.0;
        for (int a2 = 0; a2 <= std::min(l1, l2); ++a2) {
          const int a1 = l1 - a2;
          const int rest = l2 - a2;
          for (int a4 = 0; 2 * a4 <= rest; ++a4) {
            const int a3 = rest - 2 * a4;
            s += std::pow(t1, a1) * std::pow(t2, a2) * std::pow(t3, a3) * std::pow(t4, a4) *
                 inv_factorial(a1) * inv_factorial(a2) * inv_factorial(a3) * inv_factorial(a4);
          }
        }
        out[e] += t5 * t5 * s;
      }
      ++e;
    }
  }
  return out;
}

SearchResult search_nontrivial(const SystemInstance& sys, int restarts, std::uint64_t seed) {
  sys.validate();
  if (restarts < 1) throw std::invalid_argument("restarts must be at least 1");
  SearchResult best;
  best.residual_norm = std::numeric_limits<double>::infinity();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rs = 0; rs < restarts; ++rs) {
    Rng rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(rs)}));
    const Param p{sys, rs % sys.m};
    Vec z(p.free_dim());
    for (auto& v : z) v = gauss(rng);
    Vec r = residual(sys, p.full(z));
    double cost = r.squaredNorm();
    double mu = 1e-3;
    for (int it = 0; it < kIterations && cost > 1e-30; ++it) {
      const Mat j = jacobian(p, z, r);
      const Mat jtj = j.transpose() * j;
      const Vec g = j.transpose() * r;
      bool improved = false;
      for (int attempt = 0; attempt < 10; ++attempt) {
        Mat lhs = jtj;
        lhs.diagonal() += mu * (jtj.diagonal().array() + 1e-12).matrix();
        const Vec step = lhs.ldlt().solve(-g);
        if (!step.allFinite()) {
          mu *= 4.0;
          continue;
        }
        const Vec zn = z + step;
        const Vec rn = residual(sys, p.full(zn));
        const double cn = rn.squaredNorm();
        if (std::isfinite(cn) && cn < cost) {
          z = zn;
          r = rn;
          cost = cn;
          mu = std::max(mu / 3.0, 1e-12);
          improved = true;
          break;
        }
        mu *= 4.0;
      }
      if (!improved) break;
    }
    const Vec v = normalize(sys, p.full(z));
    const double rn = residual(sys, v).norm();
    if (std::isfinite(rn) && rn < best.residual_norm) {
      best.residual_norm = rn;
      best.vars = v;
    }
    best.restarts = rs + 1;
    if (best.residual_norm < kFoundTol) break;
  }
  best.found = best.residual_norm < kFoundTol;
  return best;
}

}  // namespace dsmoe
