// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/em.hpp"

#include "dsmoe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dsmoe {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogHalf = -0.69314718055994530942;
constexpr double kLog2Pi = 1.83787706640934548356;
constexpr double kArmijo = 1e-4;
constexpr double kDegenerateMass = 1e-8;

void normalize_log_rows(Mat& l) {
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double m = l.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < l.cols(); ++j) s += std::exp(l(i, j) - m);
    l.row(i).array() -= m + std::log(s);
  }
}

// Component means and log prior weights for the whole dataset, kept in sync
// with `model` so that block updates only recompute what they touch.
class Workspace {
 public:
  Workspace(const MixingMeasurePair& m, const Dataset& d) : model(m), data(d) {
    const auto n = data.size();
    mean.resize(n, k());
    logprior.resize(n, k());
    for (int c = 0; c < k(); ++c) refresh_mean(c);
    refresh_shared_prior();
    refresh_routed_prior();
  }

  int k1() const { return model.k1(); }
  int k() const { return model.k1() + model.k2(); }

  double variance(int c) const {
    return c < k1() ? model.shared[c].variance : model.routed[c - k1()].variance;
  }

  void refresh_mean(int c) {
    const bool shared = c < k1();
    const auto& fam = shared ? model.shared_family : model.routed_family;
    const auto& p = shared ? model.shared[c].params : model.routed[c - k1()].params;
    for (Eigen::Index i = 0; i < data.size(); ++i) mean(i, c) = expert_eval(fam, p, data.row(i));
  }

  void refresh_shared_prior() {
    for (int c = 0; c < k1(); ++c) {
      logprior.col(c).setConstant(kLogHalf + std::log(model.shared[c].weight));
    }
  }

  void refresh_routed_prior() {
    logprior.rightCols(model.k2()) =
        log_gate_matrix(model.gating, model.routed, data.x).array() + kLogHalf;
  }

  // Per-row log joint density of each component: log prior + log normal.
  double log_joint(Eigen::Index i, int c, double half_log_var, double inv_var) const {
    const double lp = logprior(i, c);
    if (lp == kNegInf) return kNegInf;
    const double r = data.y[i] - mean(i, c);
    return lp - 0.5 * kLog2Pi - half_log_var - 0.5 * r * r * inv_var;
  }

  double loglik() const {
    const int kk = k();
    std::vector<double> hlv(kk), iv(kk), row(kk);
    for (int c = 0; c < kk; ++c) {
      hlv[c] = 0.5 * std::log(variance(c));
      iv[c] = 1.0 / variance(c);
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      double m = kNegInf;
      for (int c = 0; c < kk; ++c) {
        row[c] = log_joint(i, c, hlv[c], iv[c]);
        m = std::max(m, row[c]);
      }
      double s = 0.0;
      for (int c = 0; c < kk; ++c) s += std::exp(row[c] - m);
      total += m + std::log(s);
    }
    return total / static_cast<double>(data.size());
  }

  Mat responsibilities() const {
    const int kk = k();
    std::vector<double> hlv(kk), iv(kk);
    for (int c = 0; c < kk; ++c) {
      hlv[c] = 0.5 * std::log(variance(c));
      iv[c] = 1.0 / variance(c);
    }
    Mat r(data.size(), kk);
    std::vector<double> row(kk);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      double m = kNegInf;
      for (int c = 0; c < kk; ++c) {
        row[c] = log_joint(i, c, hlv[c], iv[c]);
        m = std::max(m, row[c]);
      }
      double s = 0.0;
      for (int c = 0; c < kk; ++c) {
        row[c] = std::exp(row[c] - m);
        s += row[c];
      }
      for (int c = 0; c < kk; ++c) r(i, c) = row[c] / s;
    }
    return r;
  }

  MixingMeasurePair model;
  const Dataset& data;
  Mat mean;
  Mat logprior;
  std::vector<double> step = std::vector<double>(k() + 1, 1.0);  // per expert, then gates
};

// ---------------------------------------------------------------------------
// Expert blocks
// ---------------------------------------------------------------------------

double weighted_sse(const ExpertFamily& fam, std::span<const double> p, const Dataset& data,
                    const Vec& w, Vec* means = nullptr) {
  double sse = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double h = expert_eval(fam, p, data.row(i));
    if (means) (*means)[i] = h;
    const double r = data.y[i] - h;
    sse += w[i] * r * r;
  }
  return sse;
}

void fit_linear_expert(const ExpertFamily& fam, std::vector<double>& p, const Dataset& data,
                       const Vec& w) {
  const int d = fam.input_dim;
  Mat a(data.size(), d + 1);
  a.leftCols(d) = data.x;
  a.col(d).setOnes();
  const Mat ata = a.transpose() * w.asDiagonal() * a;
  const Vec aty = a.transpose() * (w.array() * data.y.array()).matrix();
  const Vec sol = ata.completeOrthogonalDecomposition().solve(aty);
  if (sol.allFinite()) std::copy(sol.data(), sol.data() + sol.size(), p.begin());
}

void fit_nonlinear_expert(const ExpertFamily& fam, std::vector<double>& p, const Dataset& data,
                          const Vec& w, int max_steps) {
  const int dim = fam.param_dim();
  const auto n = data.size();
  double sse = weighted_sse(fam, p, data, w);
  double damping = 1e-6;
  std::vector<double> trial(p.size());
  for (int step = 0; step < max_steps; ++step) {
    Mat jtj = Mat::Zero(dim, dim);
    Vec jte = Vec::Zero(dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      const Vec g = expert_grad(fam, p, data.row(i));
      const double r = data.y[i] - expert_eval(fam, p, data.row(i));
      jtj.selfadjointView<Eigen::Lower>().rankUpdate(g, w[i]);
      jte.noalias() += (w[i] * r) * g;
    }
    jtj = jtj.selfadjointView<Eigen::Lower>();
    if (jte.norm() <= 1e-14 * (1.0 + std::sqrt(sse))) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      Mat lhs = jtj;
      lhs.diagonal() += damping * jtj.diagonal() +
                        Vec::Constant(dim, 1e-12 * (1.0 + jtj.diagonal().maxCoeff()));
      const Vec delta = lhs.ldlt().solve(jte);
      const double slope = jte.dot(delta);
      if (!delta.allFinite() || slope <= 0.0) {
        damping *= 10.0;
        continue;
      }
      double t = 1.0;
      for (int bt = 0; bt < 30; ++bt, t *= 0.5) {
        for (int u = 0; u < dim; ++u) trial[u] = p[u] + t * delta[u];
        const double s = weighted_sse(fam, trial, data, w);
        if (std::isfinite(s) && s <= sse - 2.0 * kArmijo * t * slope) {
          const double gain = sse - s;
          p = trial;
          sse = s;
          accepted = true;
          damping = std::max(damping * 0.3, 1e-9);
          if (gain <= 1e-13 * sse) return;
          break;
        }
      }
      if (!accepted) damping *= 10.0;
    }
    if (!accepted) break;
  }
}

// Samples with non-negligible weight, packed for the GELU expert loops.
struct WeightedBatch {
  std::vector<double> x;  // row-major, d per sample
  std::vector<double> y;
  std::vector<double> w;
  int d = 1;

  WeightedBatch(const Dataset& data, const Vec& weights) : d(data.input_dim()) {
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      if (!(weights[i] > 1e-12)) continue;
      const auto row = data.row(i);
      x.insert(x.end(), row.begin(), row.end());
      y.push_back(data.y[i]);
      w.push_back(weights[i]);
    }
  }
  std::size_t size() const { return y.size(); }
};

// Half weighted mean squared residual of a GELU expert; optionally its
// gradient (descent direction already negated, i.e. the ascent direction).
double gelu_objective(const ExpertFamily& fam, const std::vector<double>& p,
                      const WeightedBatch& b, double mass, Vec* ascent) {
  const int d = b.d;
  const bool has_bias = fam.kind == ExpertKind::GeluOuterInnerBias;
  const double bias = has_bias ? p[d + 1] : 0.0;
  double f = 0.0;
  if (ascent) ascent->setZero(fam.param_dim());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double* xi = b.x.data() + i * d;
    double z = bias;
    for (int u = 0; u < d; ++u) z += p[1 + u] * xi[u];
    const double cdf = normal_cdf(z);
    const double r = b.y[i] - p[0] * z * cdf;
    f += b.w[i] * r * r;
    if (ascent) {
      const double wr = b.w[i] * r;
      const double slope = p[0] * (cdf + z * std::exp(-0.5 * z * z) * 0.39894228040143267794);
      (*ascent)[0] += wr * z * cdf;
      for (int u = 0; u < d; ++u) (*ascent)[1 + u] += wr * slope * xi[u];
      if (has_bias) (*ascent)[d + 1] += wr * slope;
    }
  }
  if (ascent) *ascent /= mass;
  return f / (2.0 * mass);
}

// Steepest ascent on the weighted Gaussian Q term with Armijo backtracking.
// `step` carries the last accepted step length between calls.
void ascend_nonlinear_expert(const ExpertFamily& fam, std::vector<double>& p, const Dataset& data,
                             const Vec& w, int max_steps, double& step) {
  const WeightedBatch batch(data, w);
  const double mass = std::accumulate(batch.w.begin(), batch.w.end(), 0.0);
  const int dim = fam.param_dim();
  Vec g(dim), g_trial(dim);
  double f = gelu_objective(fam, p, batch, mass, &g);
  std::vector<double> trial(p.size());
  double t = step;
  for (int k = 0; k < max_steps; ++k) {
    const double gg = g.squaredNorm();
    if (!(gg > 1e-24)) break;
    t = std::min(1.0, 2.0 * t);
    bool accepted = false;
    double ft = f;
    for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
      for (int u = 0; u < dim; ++u) trial[u] = p[u] + t * g[u];
      ft = gelu_objective(fam, trial, batch, mass, &g_trial);
      if (std::isfinite(ft) && ft <= f - kArmijo * t * gg) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    step = t;
    p.swap(trial);
    g.swap(g_trial);
    const double gain = f - ft;
    f = ft;
    if (gain <= 1e-12 * std::abs(f)) break;
  }
}

// Updates one component's expert parameters and variance from weights w.
// Returns false when the component is degenerate and left unchanged.
bool update_component(const ExpertFamily& fam, std::vector<double>& params, double& variance,
                      const Dataset& data, const Vec& w, const EMConfig& cfg, double& step) {
  const double mass = w.sum();
  if (mass < kDegenerateMass * static_cast<double>(data.size())) return false;
  if (fam.kind == ExpertKind::Linear) {
    fit_linear_expert(fam, params, data, w);
  } else if (fam.kind == ExpertKind::Constant) {
    // Only the sum of the parameters is identified; move the offset.
    double rest = 0.0;
    for (std::size_t u = 0; u + 1 < params.size(); ++u) rest += params[u];
    params.back() = w.dot(data.y) / mass - rest;
  } else {
    if (cfg.solver == MStepSolver::Newton) {
      fit_nonlinear_expert(fam, params, data, w, cfg.inner_steps);
    } else {
      ascend_nonlinear_expert(fam, params, data, w, cfg.inner_steps, step);
    }
  }
  const double sse = weighted_sse(fam, params, data, w);
  variance = std::max(sse / mass, kVarianceFloor);
  return true;
}

// ---------------------------------------------------------------------------
// Gate block: maximize sum_ij r_ij log g_j(x_i) over (beta0, beta1).
// ---------------------------------------------------------------------------

struct GateObjective {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

std::vector<RoutedAtom> with_gate_params(std::vector<RoutedAtom> atoms, const Vec& theta, int d) {
  for (std::size_t j = 0; j < atoms.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(j) * (d + 1);
    atoms[j].bias = theta[off];
    for (int u = 0; u < d; ++u) atoms[j].gate[u] = theta[off + 1 + u];
  }
  return atoms;
}

Vec gate_params(const std::vector<RoutedAtom>& atoms, int d) {
  Vec theta(static_cast<Eigen::Index>(atoms.size()) * (d + 1));
  for (std::size_t j = 0; j < atoms.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(j) * (d + 1);
    theta[off] = atoms[j].bias;
    for (int u = 0; u < d; ++u) theta[off + 1 + u] = atoms[j].gate[u];
  }
  return theta;
}

GateObjective gate_objective(const Gating& gating, const std::vector<RoutedAtom>& atoms,
                             const Dataset& data, const Mat& resp, int order) {
  const int d = data.input_dim();
  const int k2 = static_cast<int>(atoms.size());
  const int p = k2 * (d + 1);
  const Mat lg = log_gate_matrix(gating, atoms, data.x);
  GateObjective out;
  if (order > 0) out.grad = Vec::Zero(p);
  if (order > 1) out.hess = Mat::Zero(p, p);
  Vec ga(k2);
  Mat ha(k2, k2);
  Vec xt(d + 1);
  Vec sig(k2), s1(k2), s2(k2);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    double rsum = 0.0;
    for (int j = 0; j < k2; ++j) {
      const double r = resp(i, j);
      if (r > 0.0) {
        if (lg(i, j) == kNegInf) {
          out.value = kNegInf;
          return out;
        }
        out.value += r * lg(i, j);
      }
      rsum += r;
    }
    if (order == 0 || rsum == 0.0) continue;
    if (gating.kind == GateKind::NormalizedSigmoid) {
      double s = 0.0;
      for (int j = 0; j < k2; ++j) {
        double z = atoms[j].bias;
        for (int u = 0; u < d; ++u) z += atoms[j].gate[u] * data.x(i, u);
        sig[j] = sigmoid(z);
        s1[j] = sig[j] * (1.0 - sig[j]);
        s2[j] = s1[j] * (1.0 - 2.0 * sig[j]);
        s += sig[j];
      }
      for (int l = 0; l < k2; ++l) {
        ga[l] = resp(i, l) * (1.0 - sig[l]) - rsum * s1[l] / s;
        for (int m = 0; m < k2; ++m) ha(l, m) = rsum * s1[l] * s1[m] / (s * s);
        ha(l, l) -= resp(i, l) * s1[l] + rsum * s2[l] / s;
      }
    } else {
      for (int l = 0; l < k2; ++l) {
        const double g = lg(i, l) == kNegInf ? 0.0 : std::exp(lg(i, l));
        sig[l] = g;
        ga[l] = resp(i, l) - rsum * g;
      }
      ha.noalias() = rsum * sig * sig.transpose();
      ha.diagonal() -= rsum * sig;
    }
    xt[0] = 1.0;
    for (int u = 0; u < d; ++u) xt[1 + u] = data.x(i, u);
    for (int l = 0; l < k2; ++l) out.grad.segment(l * (d + 1), d + 1) += ga[l] * xt;
    if (order < 2) continue;
    const Mat xx = xt * xt.transpose();
    for (int l = 0; l < k2; ++l) {
      for (int m = 0; m < k2; ++m) {
        if (ha(l, m) != 0.0) out.hess.block(l * (d + 1), m * (d + 1), d + 1, d + 1) += ha(l, m) * xx;
      }
    }
  }
  return out;
}

void update_gates(MixingMeasurePair& model, const Dataset& data, const Mat& resp,
                  int max_steps) {
  const int d = data.input_dim();
  Vec theta = gate_params(model.routed, d);
  const auto p = theta.size();
  GateObjective cur = gate_objective(model.gating, model.routed, data, resp, 2);
  if (!std::isfinite(cur.value)) return;
  const double scale = std::max(1.0, resp.sum());
  for (int step = 0; step < max_steps; ++step) {
    if (cur.grad.norm() <= 1e-10 * scale) break;
    Mat neg_h = -cur.hess;
    double lambda = 1e-9 * (1.0 + neg_h.diagonal().cwiseAbs().maxCoeff());
    Vec delta;
    for (int attempt = 0; attempt < 40; ++attempt, lambda *= 10.0) {
      Mat lhs = neg_h;
      lhs.diagonal().array() += lambda;
      Eigen::LLT<Mat> llt(lhs);
      if (llt.info() == Eigen::Success) {
        delta = llt.solve(cur.grad);
        if (delta.allFinite()) break;
      }
      delta.resize(0);
    }
    if (delta.size() != p) delta = cur.grad / (1.0 + neg_h.diagonal().cwiseAbs().maxCoeff());
    const double slope = cur.grad.dot(delta);
    if (!(slope > 0.0)) break;
    double t = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
      const Vec trial_theta = theta + t * delta;
      auto trial = with_gate_params(model.routed, trial_theta, d);
      const double v = gate_objective(model.gating, trial, data, resp, 0).value;
      if (std::isfinite(v) && v >= cur.value + kArmijo * t * slope) {
        const double gain = v - cur.value;
        theta = trial_theta;
        model.routed = std::move(trial);
        accepted = true;
        if (gain <= 1e-13 * std::abs(v)) return;
        cur = gate_objective(model.gating, model.routed, data, resp, 2);
        break;
      }
    }
    if (!accepted) break;
  }
}

void ascend_gates(MixingMeasurePair& model, const Dataset& data, const Mat& resp, int max_steps,
                  double& step) {
  const int d = data.input_dim();
  const double scale = 1.0 / static_cast<double>(data.size());
  Vec theta = gate_params(model.routed, d);
  GateObjective cur = gate_objective(model.gating, model.routed, data, resp, 1);
  if (!std::isfinite(cur.value)) return;
  double t = step;
  double prev = cur.value;
  for (int k = 0; k < max_steps; ++k) {
    const Vec g = cur.grad * scale;
    const double gg = g.squaredNorm();
    if (!(gg > 1e-24)) break;
    t = std::min(1.0, 2.0 * t);
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
      const Vec trial_theta = theta + t * g;
      auto trial = with_gate_params(model.routed, trial_theta, d);
      GateObjective next = gate_objective(model.gating, trial, data, resp, 1);
      if (std::isfinite(next.value) &&
          next.value * scale >= cur.value * scale + kArmijo * t * gg) {
        theta = trial_theta;
        model.routed = std::move(trial);
        prev = cur.value;
        cur = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    step = t;
    if (cur.value - prev <= 1e-12 * std::abs(cur.value)) break;
  }
}

// One guarded M-step on the workspace; returns the number of rejected blocks.
int m_step_inplace(Workspace& ws, const Mat& resp, const EMConfig& cfg, double& ll) {
  const auto& data = ws.data;
  const int k1 = ws.k1();
  const int k2 = ws.model.k2();
  const double thresh = kDegenerateMass * static_cast<double>(data.size());
  int rejected = 0;

  auto guard = [&](auto&& apply, auto&& revert) {
    apply();
    const double nll = ws.loglik();
    if (nll >= ll) {
      ll = nll;
    } else {
      revert();
      ++rejected;
    }
  };

  // Shared weights (closed form); degenerate columns keep their weight.
  {
    const auto saved = ws.model.shared;
    guard(
        [&] {
          Vec mass = resp.leftCols(k1).colwise().sum().transpose();
          double frozen = 0.0;
          double live = 0.0;
          for (int c = 0; c < k1; ++c) {
            if (mass[c] < thresh) {
              frozen += ws.model.shared[c].weight;
            } else {
              live += mass[c];
            }
          }
          if (live <= 0.0) return;
          for (int c = 0; c < k1; ++c) {
            if (mass[c] >= thresh) ws.model.shared[c].weight = (1.0 - frozen) * mass[c] / live;
          }
          ws.refresh_shared_prior();
        },
        [&] {
          ws.model.shared = saved;
          ws.refresh_shared_prior();
        });
  }

  // Shared experts and variances.
  {
    const auto saved = ws.model.shared;
    const Mat saved_mean = ws.mean.leftCols(k1);
    guard(
        [&] {
          for (int c = 0; c < k1; ++c) {
            auto& a = ws.model.shared[c];
            if (update_component(ws.model.shared_family, a.params, a.variance, data, resp.col(c), cfg,
                                 ws.step[c])) {
              ws.refresh_mean(c);
            }
          }
        },
        [&] {
          ws.model.shared = saved;
          ws.mean.leftCols(k1) = saved_mean;
        });
  }

  // Routed experts and variances.
  {
    const auto saved = ws.model.routed;
    const Mat saved_mean = ws.mean.rightCols(k2);
    guard(
        [&] {
          for (int j = 0; j < k2; ++j) {
            auto& a = ws.model.routed[j];
            if (update_component(ws.model.routed_family, a.params, a.variance, data,
                                 resp.col(k1 + j), cfg, ws.step[k1 + j])) {
              ws.refresh_mean(k1 + j);
            }
          }
        },
        [&] {
          ws.model.routed = saved;
          ws.mean.rightCols(k2) = saved_mean;
        });
  }

  // Gating parameters.
  {
    const auto saved = ws.model.routed;
    const Mat saved_prior = ws.logprior.rightCols(k2);
    guard(
        [&] {
          if (cfg.solver == MStepSolver::Newton) {
            update_gates(ws.model, data, resp.rightCols(k2), cfg.inner_steps);
          } else {
            ascend_gates(ws.model, data, resp.rightCols(k2), cfg.inner_steps, ws.step.back());
          }
          ws.refresh_routed_prior();
        },
        [&] {
          ws.model.routed = saved;
          ws.logprior.rightCols(k2) = saved_prior;
        });
  }
  return rejected;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

void sort_shared_atoms(MixingMeasurePair& m) {
  std::stable_sort(m.shared.begin(), m.shared.end(), [](const auto& a, const auto& b) {
    return std::lexicographical_compare(a.params.begin(), a.params.end(), b.params.begin(),
                                        b.params.end());
  });
}

}  // namespace

Mat log_gate_matrix(const Gating& gating, std::span<const RoutedAtom> routed, const RowMat& x) {
  const auto n = x.rows();
  const auto d = x.cols();
  const auto k2 = static_cast<Eigen::Index>(routed.size());
  if (k2 == 0) throw std::invalid_argument("gate needs at least one routed atom");
  Mat b1(d, k2);
  Vec b0(k2);
  for (Eigen::Index j = 0; j < k2; ++j) {
    if (static_cast<Eigen::Index>(routed[j].gate.size()) != d) {
      throw std::invalid_argument("gate vector / input dimension mismatch");
    }
    for (Eigen::Index u = 0; u < d; ++u) b1(u, j) = routed[j].gate[u];
    b0[j] = routed[j].bias;
  }
  const Mat score = x * b1;
  Mat l = score.rowwise() + b0.transpose();
  switch (gating.kind) {
    case GateKind::SoftmaxDense: break;
    case GateKind::NormalizedSigmoid: l = l.unaryExpr([](double z) { return log_sigmoid(z); }); break;
    case GateKind::SoftmaxTopK: {
      if (gating.top_k < 1 || gating.top_k > k2) {
        throw std::invalid_argument("top-k must lie in [1, number of routed atoms]");
      }
      std::vector<Eigen::Index> order(k2);
      for (Eigen::Index i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](auto a, auto b) { return score(i, a) > score(i, b); });
        for (Eigen::Index r = gating.top_k; r < k2; ++r) l(i, order[r]) = kNegInf;
      }
      break;
    }
  }
  normalize_log_rows(l);
  return l;
}

Responsibilities e_step(const MixingMeasurePair& model, const Dataset& data) {
  model.validate();
  const Workspace ws(model, data);
  return {ws.responsibilities(), model.k1()};
}

MixingMeasurePair m_step(const Responsibilities& resp, const Dataset& data,
                         const MixingMeasurePair& model, const EMConfig& cfg) {
  if (resp.r.rows() != data.size() || resp.k1 != model.k1() || resp.k2() != model.k2()) {
    throw std::invalid_argument("responsibilities do not match the model / data");
  }
  Workspace ws(model, data);
  double ll = ws.loglik();
  m_step_inplace(ws, resp.r, cfg, ll);
  return ws.model;
}

FitResult run_em(const Dataset& data, MixingMeasurePair start, const EMConfig& cfg) {
  start.validate();
  data.validate();
  if (cfg.tol <= 0.0 || cfg.max_iter < 1) throw std::invalid_argument("invalid EM config");
  Workspace ws(start, data);
  FitResult res;
  double ll = ws.loglik();
  res.loglik_trace.push_back(ll);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Mat resp = ws.responsibilities();
    const double prev = ll;
    res.rejected_blocks += m_step_inplace(ws, resp, cfg, ll);
    res.loglik_trace.push_back(ll);
    res.iterations = it;
    if (std::abs(ll - prev) < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  res.model = std::move(ws.model);
  return res;
}

MixingMeasurePair initial_measure(int k1, int k2, const ExpertFamily& shared_family,
                                  const ExpertFamily& routed_family, const Gating& gating,
                                  const EMConfig& cfg, int restart) {
  if (k1 < 1 || k2 < 1) throw std::invalid_argument("k1 and k2 must be at least 1");
  Rng rng = make_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(restart)}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = shared_family.input_dim;
  MixingMeasurePair m;
  m.input_dim = d;
  m.gating = gating;
  m.shared_family = shared_family;
  m.routed_family = routed_family;
  m.shared.resize(k1);
  m.routed.resize(k2);

  if (cfg.init_reference) {
    const auto& ref = *cfg.init_reference;
    if (ref.shared_family != shared_family || ref.routed_family != routed_family) {
      throw std::invalid_argument("initial reference uses different expert families");
    }
    const double s = cfg.init_perturbation;
    std::vector<int> shared_count(ref.k1(), 0), routed_count(ref.k2(), 0);
    for (int i = 0; i < k1; ++i) ++shared_count[i % ref.k1()];
    for (int i = 0; i < k2; ++i) ++routed_count[i % ref.k2()];
    double total = 0.0;
    for (int i = 0; i < k1; ++i) {
      const auto& src = ref.shared[i % ref.k1()];
      auto& a = m.shared[i];
      a.weight = src.weight / shared_count[i % ref.k1()];
      a.params = src.params;
      for (auto& v : a.params) v += s * gauss(rng);
      a.variance = std::max(src.variance * std::exp(s * gauss(rng)), kVarianceFloor);
      total += a.weight;
    }
    for (auto& a : m.shared) a.weight /= total;
    for (int i = 0; i < k2; ++i) {
      const auto& src = ref.routed[i % ref.k2()];
      const int count = routed_count[i % ref.k2()];
      auto& a = m.routed[i];
      if (gating.kind == GateKind::NormalizedSigmoid) {
        a.bias = logit(sigmoid(src.bias) / count);
      } else {
        a.bias = src.bias - std::log(static_cast<double>(count));
      }
      a.bias += s * gauss(rng);
      a.gate = src.gate;
      for (auto& v : a.gate) v += s * gauss(rng);
      a.params = src.params;
      for (auto& v : a.params) v += s * gauss(rng);
      a.variance = std::max(src.variance * std::exp(s * gauss(rng)), kVarianceFloor);
    }
  } else {
    const double box = 10.0 * cfg.init_box_scale;
    for (auto& a : m.shared) {
      a.weight = 1.0 / k1;
      a.params.resize(shared_family.param_dim());
      for (auto& v : a.params) v = uniform(rng, -box, box);
      a.variance = uniform(rng, 0.05, 1.0);
    }
    for (auto& a : m.routed) {
      a.bias = uniform(rng, -1.0, 1.0);
      a.gate.resize(d);
      for (auto& v : a.gate) v = uniform(rng, -1.0, 1.0);
      a.params.resize(routed_family.param_dim());
      for (auto& v : a.params) v = uniform(rng, -box, box);
      a.variance = uniform(rng, 0.05, 1.0);
    }
  }
  return m;
}

FitResult fit_mle(const Dataset& data, int k1, int k2, const ExpertFamily& shared_family,
                  const ExpertFamily& routed_family, const Gating& gating, const EMConfig& cfg) {
  if (k1 < 1 || k2 < 1) throw std::invalid_argument("k1 and k2 must be at least 1");
  if (data.size() < k1 + k2) {
    throw std::invalid_argument("need at least k1 + k2 samples, got " + std::to_string(data.size()));
  }
  if (data.input_dim() != shared_family.input_dim || data.input_dim() != routed_family.input_dim) {
    throw std::invalid_argument("dataset input dimension differs from the expert families");
  }
  if (cfg.restarts < 1) throw std::invalid_argument("restarts must be at least 1");
  std::optional<FitResult> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    auto start = initial_measure(k1, k2, shared_family, routed_family, gating, cfg, r);
    FitResult res = run_em(data, std::move(start), cfg);
    res.restart_index = r;
    if (!best || res.final_loglik() > best->final_loglik()) best = std::move(res);
  }
  sort_shared_atoms(best->model);
  return *best;
}

}  // namespace dsmoe
