// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/cli.hpp"

#include "dsmoe/bench.hpp"
#include "dsmoe/em.hpp"
#include "dsmoe/identifiability.hpp"
#include "dsmoe/model_json.hpp"
#include "dsmoe/polysys.hpp"
#include "dsmoe/router_metrics.hpp"
#include "dsmoe/sampler.hpp"
#include "dsmoe/voronoi.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace dsmoe {

namespace {

using nlohmann::json;

void emit_json(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

json cells_json(const Cells& cells) {
  json a = json::array();
  for (const auto& c : cells) a.push_back(c);
  return a;
}

// Exponent applied to the parameter discrepancies of each cell.
json exponents_json(const Cells& cells, LossKind kind, bool routed) {
  json a = json::array();
  for (const auto& c : cells) {
    const int m = static_cast<int>(c.size());
    if (m == 0) {
      a.push_back(nullptr);
    } else if (kind == LossKind::D4) {
      a.push_back(1);
    } else if (kind == LossKind::D2 && m > 1) {
      a.push_back(routed ? r2_exponent(m).value : r1_exponent(m).value);
    } else {
      a.push_back(m == 1 ? 1 : 2);
    }
  }
  return a;
}

RowMat ident_grid(int d, int total) {
  const int per_axis =
      std::max(2, static_cast<int>(std::lround(std::pow(static_cast<double>(total), 1.0 / d))));
  return uniform_grid(d, -3.0, 3.0, per_axis);
}

std::vector<std::int64_t> curve_points(const RoutingLog& log, bool drop_last) {
  std::vector<std::int64_t> ids = log.checkpoints;
  if (drop_last && !ids.empty()) ids.pop_back();
  return ids;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dsmoe: mixture-of-experts estimation toolkit", "dsmoe"};
  app.require_subcommand(1);
  std::function<void()> action;

  // simulate
  std::string sim_model, sim_out;
  long long sim_n = 1000;
  std::uint64_t sim_seed = 0;
  double sim_lo = -3.0, sim_hi = 3.0;
  auto* sim = app.add_subcommand("simulate", "Draw a dataset from a model");
  sim->add_option("--model", sim_model, "Model JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--n", sim_n, "Sample size")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "Seed");
  sim->add_option("--low", sim_lo, "Lower input bound");
  sim->add_option("--high", sim_hi, "Upper input bound");
  sim->add_option("--out", sim_out, "Dataset CSV")->required();
  sim->callback([&] {
    action = [&] {
      const auto model = read_model(sim_model);
      write_dataset_csv(sample_dataset(model, {sim_n, sim_lo, sim_hi, sim_seed}), sim_out);
    };
  });

  // fit
  std::string fit_data, fit_out, fit_gating = "softmax", fit_sf = "linear", fit_rf = "linear";
  std::string fit_init;
  int fit_k1 = 1, fit_k2 = 2;
  EMConfig fit_em;
  auto* fit = app.add_subcommand("fit", "Maximum likelihood fit by EM");
  fit->add_option("--data", fit_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--k1", fit_k1, "Shared atoms")->check(CLI::PositiveNumber);
  fit->add_option("--k2", fit_k2, "Routed atoms")->check(CLI::PositiveNumber);
  fit->add_option("--gating", fit_gating, "softmax|sigmoid|topk:<K>");
  fit->add_option("--shared-family", fit_sf, "Shared expert family");
  fit->add_option("--routed-family", fit_rf, "Routed expert family");
  fit->add_option("--seed", fit_em.seed, "Seed");
  fit->add_option("--restarts", fit_em.restarts, "EM restarts")->check(CLI::PositiveNumber);
  fit->add_option("--max-iter", fit_em.max_iter, "EM iteration cap")->check(CLI::PositiveNumber);
  fit->add_option("--tol", fit_em.tol, "Log-likelihood tolerance")->check(CLI::PositiveNumber);
  fit->add_option("--inner-steps", fit_em.inner_steps, "Ascent steps per M-step block")
      ->check(CLI::PositiveNumber);
  fit->add_option("--init", fit_init, "Start near this model JSON")->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "Fitted model JSON")->required();
  fit->callback([&] {
    action = [&] {
      const Dataset data = read_dataset_csv(fit_data);
      const int d = data.input_dim();
      const ExpertFamily sf{expert_kind_from_string(fit_sf), d};
      const ExpertFamily rf{expert_kind_from_string(fit_rf), d};
      EMConfig em = fit_em;
      if (!fit_init.empty()) em.init_reference = read_model(fit_init);
      const FitResult res = fit_mle(data, fit_k1, fit_k2, sf, rf, gating_from_string(fit_gating), em);
      write_model(res.model, fit_out);
      out << json{{"loglik", res.final_loglik()},
                  {"iterations", res.iterations},
                  {"converged", res.converged},
                  {"restart", res.restart_index}}
                 .dump()
          << '\n';
    };
  });

  // loss
  std::string loss_fitted, loss_truth, loss_name = "d1", loss_out;
  int loss_K = 0;
  bool loss_align = false;
  auto* loss = app.add_subcommand("loss", "Voronoi loss between a fitted and a true model");
  loss->add_option("--fitted", loss_fitted, "Fitted model JSON")->required()->check(CLI::ExistingFile);
  loss->add_option("--truth", loss_truth, "True model JSON")->required()->check(CLI::ExistingFile);
  loss->add_option("--loss", loss_name, "d1|d2|d3|d4|d5")
      ->check(CLI::IsMember({"d1", "d2", "d3", "d4", "d5"}));
  loss->add_option("--K", loss_K, "Active experts for d5");
  loss->add_flag("--align", loss_align, "Remove the softmax gate gauge before comparing");
  loss->add_option("--out", loss_out, "Output JSON (default stdout)");
  loss->callback([&] {
    action = [&] {
      const LossSpec spec = loss_from_string(loss_name, loss_K);
      const auto truth = read_model(loss_truth);
      auto fitted = read_model(loss_fitted);
      if (loss_align) fitted = align_softmax_gauge(fitted, truth);
      const double value = compute_loss(spec, fitted, truth);
      const auto cells = assign_voronoi(fitted, truth);
      emit_json({{"loss", value},
                 {"cells",
                  {{"shared", cells_json(cells.shared_cells)},
                   {"routed", cells_json(cells.routed_cells)}}},
                 {"exponents_used",
                  {{"shared", exponents_json(cells.shared_cells, spec.kind, false)},
                   {"routed", exponents_json(cells.routed_cells, spec.kind, true)}}}},
                loss_out, out);
    };
  });

  // bench
  int bench_theorem = 0, bench_reps = 0, bench_threads = 0;
  std::string bench_scale = "desk", bench_out, bench_config;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "Convergence-rate experiment");
  auto* th_opt = bench->add_option("--theorem", bench_theorem, "Preset 1-4")->check(CLI::Range(1, 4));
  auto* cfg_opt =
      bench->add_option("--config", bench_config, "Experiment JSON")->check(CLI::ExistingFile);
  th_opt->excludes(cfg_opt);
  bench->add_option("--scale", bench_scale, "desk|full")->check(CLI::IsMember({"desk", "full"}));
  bench->add_option("--reps", bench_reps, "Repetitions per n")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "Master seed");
  bench->add_option("--threads", bench_threads, "Worker threads (0: all cores)")
      ->check(CLI::NonNegativeNumber);
  bench->add_option("--out", bench_out, "Records CSV")->required();
  bench->callback([&] {
    if (bench_theorem == 0 && bench_config.empty()) {
      throw CLI::RequiredError("--theorem or --config");
    }
    action = [&] {
      ExperimentConfig cfg;
      if (!bench_config.empty()) {
        std::ifstream f(bench_config);
        cfg = experiment_from_json(json::parse(f));
      } else {
        cfg = preset_theorem(bench_theorem,
                             bench_scale == "full" ? BenchScale::Full : BenchScale::Desk);
        cfg.master_seed = bench_seed;
      }
      if (bench_reps > 0) cfg.reps = bench_reps;
      cfg.threads = bench_threads;
      const auto records = run_experiment(cfg);
      export_csv(records, bench_out);
      json summary{{"records", records.size()}, {"loss", to_string(cfg.loss)}};
      try {
        const SlopeFit s = fit_loglog_slope(records);
        summary["slope"] = s.slope;
        summary["intercept"] = s.intercept;
        summary["stderr_slope"] = s.stderr_slope;
        summary["r_squared"] = s.r_squared;
      } catch (const std::invalid_argument&) {
        summary["slope"] = nullptr;
      }
      out << summary.dump() << '\n';
    };
  });

  // polysys
  std::string ps_system = "r1";
  int ps_m = 2, ps_r = 3, ps_d = 1, ps_restarts = 1000;
  std::uint64_t ps_seed = 0;
  auto* ps = app.add_subcommand("polysys", "Search a polynomial system for non-trivial roots");
  ps->add_option("--system", ps_system, "r1|r2")->check(CLI::IsMember({"r1", "r2"}));
  ps->add_option("--m", ps_m, "Cell size")->check(CLI::PositiveNumber);
  ps->add_option("--r", ps_r, "Order")->check(CLI::PositiveNumber);
  ps->add_option("--d", ps_d, "Input dimension")->check(CLI::PositiveNumber);
  ps->add_option("--restarts", ps_restarts, "Random restarts")->check(CLI::PositiveNumber);
  ps->add_option("--seed", ps_seed, "Seed");
  ps->callback([&] {
    action = [&] {
      SystemInstance sys{system_kind_from_string(ps_system), ps_m, ps_r, ps_d};
      sys.validate();
      const auto res = search_nontrivial(sys, ps_restarts, ps_seed);
      json j{{"found", res.found}, {"residual_norm", res.residual_norm}, {"restarts", res.restarts}};
      if (res.found) j["vars"] = std::vector<double>(res.vars.begin(), res.vars.end());
      out << j.dump(2) << '\n';
    };
  });

  // ident
  std::string id_model, id_mode = "strong";
  int id_grid = 512;
  double id_threshold = 1e-3;
  bool id_pooled = false;
  auto* ident = app.add_subcommand("ident", "Identifiability score of a model's expert family");
  ident->add_option("--model", id_model, "Model JSON")->required()->check(CLI::ExistingFile);
  ident->add_option("--mode", id_mode, "strong|weak")->check(CLI::IsMember({"strong", "weak"}));
  ident->add_option("--grid", id_grid, "Total grid points on [-3,3]^d")->check(CLI::PositiveNumber);
  ident->add_option("--threshold", id_threshold, "Pass threshold on the relative score");
  ident->add_flag("--pooled", id_pooled, "Pool derivative functions across atoms");
  ident->callback([&] {
    action = [&] {
      const auto model = read_model(id_model);
      const RowMat grid = ident_grid(model.input_dim, id_grid);
      ParamList routed;
      for (const auto& a : model.routed) routed.push_back(a.params);
      IdentScore s;
      if (id_mode == "strong") {
        ParamList shared;
        for (const auto& a : model.shared) shared.push_back(a.params);
        s = strong_identifiability_score(model.shared_family, model.routed_family, shared, routed,
                                         grid, id_pooled);
      } else {
        s = weak_identifiability_score(model.routed_family, routed, grid, id_pooled);
      }
      out << json{{"score", s.relative()},
                  {"pass", s.pass(id_threshold)},
                  {"min_singular", s.min_singular},
                  {"max_singular", s.max_singular},
                  {"gram_dim", s.gram_dim}}
                 .dump(2)
          << '\n';
    };
  });

  // router
  std::string rt_log, rt_metric = "saturation", rt_util = "tokens", rt_out;
  std::optional<std::int64_t> rt_t, rt_T;
  auto* router = app.add_subcommand("router", "Router saturation, change rate and fairness");
  router->add_option("--log", rt_log, "Routing log CSV")->required()->check(CLI::ExistingFile);
  router->add_option("--metric", rt_metric, "saturation|change-rate|jain")
      ->check(CLI::IsMember({"saturation", "change-rate", "jain"}));
  router->add_option("--t", rt_t, "Checkpoint id (omit for a per-checkpoint curve)");
  router->add_option("--T", rt_T, "Reference checkpoint for saturation (default: last)");
  router->add_option("--utilization", rt_util, "tokens|weight")
      ->check(CLI::IsMember({"tokens", "weight"}));
  router->add_option("--out", rt_out, "Curve CSV path (default stdout)");
  router->callback([&] {
    action = [&] {
      const RoutingLog log = ingest_routing_log(rt_log);
      const std::int64_t T = rt_T.value_or(log.checkpoints.back());
      const auto mode = rt_util == "weight" ? UtilizationMode::Weight : UtilizationMode::Tokens;
      auto metric = [&](std::int64_t t) {
        if (rt_metric == "saturation") return saturation(log, t, T);
        if (rt_metric == "change-rate") return change_rate(log, t);
        const auto r = utilization(log, t, mode);
        return jain_index(r);
      };
      if (rt_t) {
        json j{{"metric", rt_metric}, {"t", *rt_t}, {"value", metric(*rt_t)}};
        if (rt_metric == "saturation") j["T"] = T;
        if (rt_out.empty()) {
          out << j.dump(2) << '\n';
        } else {
          emit_json(j, rt_out, out);
        }
        return;
      }
      std::ofstream file;
      if (!rt_out.empty()) {
        file.open(rt_out);
        if (!file) throw std::runtime_error("cannot write " + rt_out);
      }
      std::ostream& dst = rt_out.empty() ? out : file;
      dst << "checkpoint," << rt_metric << '\n' << std::setprecision(17);
      for (auto t : curve_points(log, rt_metric == "change-rate")) dst << t << ',' << metric(t) << '\n';
    };
  });

  // tv
  std::string tv_a, tv_b;
  int tv_nx = 200;
  double tv_half = 50.0;
  std::uint64_t tv_seed = 0;
  auto* tv = app.add_subcommand("tv", "Monte-Carlo total variation distance between two models");
  tv->add_option("--a", tv_a, "First model JSON")->required()->check(CLI::ExistingFile);
  tv->add_option("--b", tv_b, "Second model JSON")->required()->check(CLI::ExistingFile);
  tv->add_option("--n-x", tv_nx, "Input draws")->check(CLI::PositiveNumber);
  tv->add_option("--y-halfwidth", tv_half, "Half width of the response window")
      ->check(CLI::PositiveNumber);
  tv->add_option("--seed", tv_seed, "Seed");
  tv->callback([&] {
    action = [&] {
      out << json{{"tv", tv_distance(read_model(tv_a), read_model(tv_b), tv_nx, tv_half, tv_seed)}}
                 .dump()
          << '\n';
    };
  });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "dsmoe: " << e.what() << '\n';
    return 2;
  }
  try {
    if (action) action();
  } catch (const std::exception& e) {
    err << "dsmoe: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dsmoe
