// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/bench.hpp"

#include "dsmoe/model_json.hpp"
#include "dsmoe/rng.hpp"
#include "dsmoe/sampler.hpp"
#include "dsmoe/voronoi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dsmoe {

namespace {

MixingMeasurePair base_truth(const ExpertFamily& shared, const ExpertFamily& routed, GateKind gate) {
  MixingMeasurePair m;
  m.input_dim = 1;
  m.gating = {gate, 0};
  m.shared_family = shared;
  m.routed_family = routed;
  return m;
}

double integrate_abs_diff(const MixingMeasurePair& a, const MixingMeasurePair& b,
                          std::span<const double> x, double lo, double hi) {
  auto f = [&](double y) {
    return std::abs(conditional_density(a, x, y) - conditional_density(b, x, y));
  };
  // Adaptive trapezoid: split a panel until halving changes it by < tol.
  constexpr int kPanels = 2000;
  constexpr double kTol = 1e-10;
  double total = 0.0;
  const double h = (hi - lo) / kPanels;
  struct Panel {
    double a, b, fa, fb;
    int depth;
  };
  std::vector<Panel> stack;
  double fprev = f(lo);
  for (int p = 0; p < kPanels; ++p) {
    const double a0 = lo + p * h;
    const double b0 = p + 1 == kPanels ? hi : a0 + h;
    const double fb0 = f(b0);
    stack.push_back({a0, b0, fprev, fb0, 0});
    fprev = fb0;
    while (!stack.empty()) {
      const Panel q = stack.back();
      stack.pop_back();
      const double m = 0.5 * (q.a + q.b);
      const double fm = f(m);
      const double whole = 0.5 * (q.b - q.a) * (q.fa + q.fb);
      const double halves = 0.25 * (q.b - q.a) * (q.fa + 2.0 * fm + q.fb);
      if (std::abs(whole - halves) < kTol * (q.b - q.a) || q.depth >= 30) {
        total += halves;
      } else {
        stack.push_back({q.a, m, q.fa, fm, q.depth + 1});
        stack.push_back({m, q.b, fm, q.fb, q.depth + 1});
      }
    }
  }
  return total;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string to_string(const LossSpec& loss) {
  switch (loss.kind) {
    case LossKind::D1: return "d1";
    case LossKind::D2: return "d2";
    case LossKind::D3: return "d3";
    case LossKind::D4: return "d4";
    case LossKind::D5: return "d5";
  }
  return "unknown";
}

LossSpec loss_from_string(const std::string& name, int K) {
  if (name == "d1") return {LossKind::D1, 0};
  if (name == "d2") return {LossKind::D2, 0};
  if (name == "d3") return {LossKind::D3, 0};
  if (name == "d4") return {LossKind::D4, 0};
  if (name == "d5") {
    if (K < 1) throw std::invalid_argument("loss d5 needs K >= 1");
    return {LossKind::D5, K};
  }
  throw std::invalid_argument("unknown loss '" + name + "' (expected d1..d5)");
}

MixingMeasurePair align_softmax_gauge(const MixingMeasurePair& fitted,
                                      const MixingMeasurePair& truth) {
  if (fitted.gating.kind == GateKind::NormalizedSigmoid) return fitted;
  MixingMeasurePair out = fitted;
  const int d = fitted.input_dim;
  auto moments = [d](const std::vector<RoutedAtom>& atoms, double& lse, std::vector<double>& mean) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& a : atoms) m = std::max(m, a.bias);
    double s = 0.0;
    mean.assign(d, 0.0);
    for (const auto& a : atoms) {
      const double w = std::exp(a.bias - m);
      s += w;
      for (int u = 0; u < d; ++u) mean[u] += w * a.gate[u];
    }
    for (auto& v : mean) v /= s;
    lse = m + std::log(s);
  };
  double lse_f = 0.0, lse_t = 0.0;
  std::vector<double> mean_f, mean_t;
  moments(fitted.routed, lse_f, mean_f);
  moments(truth.routed, lse_t, mean_t);
  for (auto& a : out.routed) {
    a.bias += lse_t - lse_f;
    for (int u = 0; u < d; ++u) a.gate[u] += mean_t[u] - mean_f[u];
  }
  return out;
}

double compute_loss(const LossSpec& loss, const MixingMeasurePair& fitted,
                    const MixingMeasurePair& truth, const std::vector<RoutedAtom>& reference) {
  switch (loss.kind) {
    case LossKind::D1: return loss_d1(fitted, truth, assign_voronoi(fitted, truth));
    case LossKind::D2: return loss_d2(fitted, truth, assign_voronoi(fitted, truth));
    case LossKind::D3: return loss_d3(fitted, truth, assign_voronoi(fitted, truth));
    case LossKind::D4: return loss_d4(fitted, truth, reference.empty() ? truth.routed : reference);
    case LossKind::D5: return loss_d5(fitted, truth, loss.K);
  }
  return 0.0;
}

int topk_required(const MixingMeasurePair& fitted, const MixingMeasurePair& truth) {
  if (truth.gating.kind != GateKind::SoftmaxTopK) {
    throw std::invalid_argument("true measure does not use Top-K gating");
  }
  const auto cells = assign_voronoi(fitted, truth);
  std::vector<int> sizes;
  for (const auto& c : cells.routed_cells) sizes.push_back(static_cast<int>(c.size()));
  std::sort(sizes.rbegin(), sizes.rend());
  int total = 0;
  for (int j = 0; j < truth.gating.top_k && j < static_cast<int>(sizes.size()); ++j) total += sizes[j];
  return total;
}

bool check_topk_lower_bound(FitResult& fit, const MixingMeasurePair& truth) {
  fit.topk_bound_violated = fit.model.gating.kind == GateKind::SoftmaxTopK &&
                            truth.gating.kind == GateKind::SoftmaxTopK &&
                            fit.model.gating.top_k < topk_required(fit.model, truth);
  return fit.topk_bound_violated;
}

void ExperimentConfig::validate() const {
  truth.validate();
  if (fitted_k1 < 1 || fitted_k2 < 1) throw std::invalid_argument("fitted k1, k2 must be >= 1");
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (n_grid.empty()) throw std::invalid_argument("n grid is empty");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 1 || (i > 0 && n_grid[i] <= n_grid[i - 1])) {
      throw std::invalid_argument("n grid must be positive and strictly increasing");
    }
  }
  if (loss.kind == LossKind::D5 && (loss.K < 1 || loss.K > truth.k2())) {
    throw std::invalid_argument("loss d5: K must lie in [1, k2*]");
  }
}

std::vector<Eigen::Index> log_spaced_grid(double lo, double hi, int count) {
  if (count < 1 || !(lo > 0.0) || hi < lo) throw std::invalid_argument("invalid log grid");
  std::vector<Eigen::Index> out;
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    const auto n = static_cast<Eigen::Index>(std::llround(std::exp(std::log(lo) + t * std::log(hi / lo))));
    if (out.empty() || n > out.back()) out.push_back(n);
  }
  return out;
}

ExperimentConfig preset_theorem(int which, BenchScale scale) {
  const ExpertFamily gelu_bias{ExpertKind::GeluOuterInnerBias, 1};
  const ExpertFamily gelu{ExpertKind::GeluOuterInner, 1};
  const ExpertFamily linear{ExpertKind::Linear, 1};
  ExperimentConfig cfg;
  switch (which) {
    case 1:
      cfg.truth = base_truth(gelu_bias, gelu, GateKind::SoftmaxDense);
      cfg.truth.shared = {{1.0, {-8.0, 6.0, 0.0}, 0.25}};
      cfg.truth.routed = {{-0.5, {5.0}, {4.0, -12.0}, 0.4}, {0.5, {5.0}, {4.0, 12.0}, 0.4}};
      cfg.loss = {LossKind::D1, 0};
      break;
    case 2:
      cfg.truth = base_truth(linear, linear, GateKind::SoftmaxDense);
      cfg.truth.shared = {{1.0, {2.0, 0.0}, 0.2}};
      cfg.truth.routed = {{-0.5, {5.0}, {8.0, 2.0}, 0.4}, {0.5, {5.0}, {-6.0, 1.0}, 0.4}};
      cfg.loss = {LossKind::D2, 0};
      break;
    case 3:
      cfg.truth = base_truth(gelu_bias, gelu, GateKind::NormalizedSigmoid);
      cfg.truth.shared = {{1.0, {-8.0, 6.0, 0.0}, 0.25}};
      cfg.truth.routed = {{-0.5, {0.0}, {4.0, -12.0}, 0.4}, {0.5, {0.0}, {4.0, 12.0}, 0.4}};
      cfg.loss = {LossKind::D3, 0};
      break;
    case 4:
      cfg.truth = base_truth(gelu_bias, linear, GateKind::NormalizedSigmoid);
      cfg.truth.shared = {{1.0, {-8.0, 6.0, 0.0}, 0.25}};
      cfg.truth.routed = {{-0.5, {5.0}, {8.0, 2.0}, 0.4}, {0.5, {5.0}, {-6.0, 1.0}, 0.4}};
      cfg.loss = {LossKind::D4, 0};
      break;
    default: throw std::invalid_argument("theorem must be 1, 2, 3 or 4");
  }
  cfg.fitted_k1 = 2;
  cfg.fitted_k2 = 3;
  if (scale == BenchScale::Desk) {
    cfg.n_grid = log_spaced_grid(1e2, std::pow(10.0, 4.5), 8);
    cfg.reps = 20;
  } else {
    cfg.n_grid = log_spaced_grid(1e2, 1e5, 10);
    cfg.reps = 40;
  }
  cfg.em.tol = 1e-6;
  cfg.em.max_iter = 1000;
  cfg.em.restarts = 1;
  cfg.em.init_reference = cfg.truth;
  cfg.em.init_perturbation = 0.1;
  return cfg;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t total = cfg.n_grid.size() * static_cast<std::size_t>(cfg.reps);
  std::vector<RunRecord> records(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      const auto ni = job / static_cast<std::size_t>(cfg.reps);
      const int rep = static_cast<int>(job % static_cast<std::size_t>(cfg.reps));
      RunRecord& rec = records[job];
      rec.n = cfg.n_grid[ni];
      rec.rep = rep;
      rec.seed = derive_seed(cfg.master_seed, {ni, static_cast<std::uint64_t>(rep)});
      try {
        const Dataset data = sample_dataset(cfg.truth, {rec.n, -3.0, 3.0, rec.seed});
        EMConfig em = cfg.em;
        em.seed = derive_seed(rec.seed, {1});
        const FitResult fit = fit_mle(data, cfg.fitted_k1, cfg.fitted_k2, cfg.truth.shared_family,
                                      cfg.truth.routed_family, cfg.truth.gating, em);
        const auto fitted = align_softmax_gauge(fit.model, cfg.truth);
        rec.loss = compute_loss(cfg.loss, fitted, cfg.truth, cfg.d4_reference);
        rec.loglik = fit.final_loglik();
        rec.iterations = fit.iterations;
        rec.converged = fit.converged;
      } catch (const std::exception&) {
        rec.loss = std::numeric_limits<double>::quiet_NaN();
        rec.loglik = std::numeric_limits<double>::quiet_NaN();
        rec.converged = false;
      }
    }
  };
  unsigned threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                     : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(total));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return records;
}

SlopeFit fit_loglog_slope(const std::vector<RunRecord>& records) {
  std::map<Eigen::Index, std::pair<double, int>> by_n;
  for (const auto& r : records) {
    if (!std::isfinite(r.loss)) continue;
    auto& acc = by_n[r.n];
    acc.first += r.loss;
    acc.second += 1;
  }
  std::vector<double> xs, ys;
  for (const auto& [n, acc] : by_n) {
    const double mean = acc.first / acc.second;
    if (!(mean > 0.0) || n < 1) continue;
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(mean));
  }
  const auto m = xs.size();
  if (m < 2) throw std::invalid_argument("slope fit needs at least two distinct n with positive loss");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = ys[i] - fit.intercept - fit.slope * xs[i];
    sse += e * e;
  }
  fit.stderr_slope = m > 2 ? std::sqrt(sse / (m - 2) / sxx) : 0.0;
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  return fit;
}

double tv_distance(const MixingMeasurePair& a, const MixingMeasurePair& b, int n_x,
                   double y_halfwidth, std::uint64_t seed) {
  a.validate();
  b.validate();
  if (a.input_dim != b.input_dim) throw std::invalid_argument("models differ in input dimension");
  if (n_x < 1 || !(y_halfwidth > 0.0)) throw std::invalid_argument("invalid TV probe settings");
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::vector<double> x(a.input_dim);
  double total = 0.0;
  for (int i = 0; i < n_x; ++i) {
    for (auto& v : x) v = unif(rng);
    total += 0.5 * integrate_abs_diff(a, b, x, -y_halfwidth, y_halfwidth);
  }
  return std::clamp(total / n_x, 0.0, 1.0);
}

void export_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "n,rep,loss,loglik,iterations,converged,seed\n";
  for (const auto& r : records) {
    out << r.n << ',' << r.rep << ',' << fmt17(r.loss) << ',' << fmt17(r.loglik) << ','
        << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << r.seed << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path.string());
}

std::vector<RunRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "n,rep,loss,loglik,iterations,converged,seed") {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[7];
    for (auto& s : f) std::getline(row, s, ',');
    try {
      RunRecord r;
      r.n = std::stoll(f[0]);
      r.rep = std::stoi(f[1]);
      r.loss = std::stod(f[2]);
      r.loglik = std::stod(f[3]);
      r.iterations = std::stoi(f[4]);
      r.converged = f[5] == "1";
      r.seed = std::stoull(f[6]);
      out.push_back(r);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
  }
  return out;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig cfg;
    cfg.truth = model_from_json(j.at("truth"));
    cfg.fitted_k1 = j.value("fitted_k1", 2);
    cfg.fitted_k2 = j.value("fitted_k2", 3);
    cfg.loss = loss_from_string(j.at("loss").get<std::string>(), j.value("K", 0));
    for (const auto& n : j.at("n_grid")) cfg.n_grid.push_back(n.get<Eigen::Index>());
    cfg.reps = j.value("reps", 1);
    cfg.master_seed = j.value("master_seed", std::uint64_t{0});
    cfg.em.restarts = 1;
    cfg.em.init_reference = cfg.truth;
    if (j.contains("em")) {
      const auto& e = j.at("em");
      cfg.em.tol = e.value("tol", cfg.em.tol);
      cfg.em.max_iter = e.value("max_iter", cfg.em.max_iter);
      cfg.em.restarts = e.value("restarts", cfg.em.restarts);
      cfg.em.inner_steps = e.value("inner_steps", cfg.em.inner_steps);
      cfg.em.init_box_scale = e.value("init_box_scale", cfg.em.init_box_scale);
      cfg.em.init_perturbation = e.value("init_perturbation", cfg.em.init_perturbation);
      const auto init = e.value("init", std::string("truth"));
      if (init == "box") {
        cfg.em.init_reference.reset();
      } else if (init != "truth") {
        throw std::invalid_argument("em.init must be 'truth' or 'box'");
      }
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
}

}  // namespace dsmoe
