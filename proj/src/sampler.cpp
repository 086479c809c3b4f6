// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/sampler.hpp"

#include "dsmoe/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsmoe {

namespace {

// Inverse-CDF draw from a discrete distribution; falls back to the last
// positive entry when rounding leaves u above the cumulative total.
Eigen::Index draw_index(const Vec& probs, double u) {
  double acc = 0.0;
  Eigen::Index last = 0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    last = j;
    acc += probs[j];
    if (u < acc) return j;
  }
  return last;
}

}  // namespace

Dataset sample_dataset(const MixingMeasurePair& model, const SamplerConfig& cfg) {
  model.validate();
  if (cfg.n < 1) throw std::invalid_argument("sample size must be positive");
  if (!(cfg.input_low < cfg.input_high)) throw std::invalid_argument("input_low must be < input_high");

  const int d = model.input_dim;
  Rng rng = make_rng(cfg.seed);
  std::uniform_real_distribution<double> unif_x(cfg.input_low, cfg.input_high);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::normal_distribution<double> std_normal(0.0, 1.0);

  Vec shared_w(model.k1());
  for (int i = 0; i < model.k1(); ++i) shared_w[i] = model.shared[i].weight;

  Dataset data;
  data.x.resize(cfg.n, d);
  data.y.resize(cfg.n);
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    for (int u = 0; u < d; ++u) data.x(i, u) = unif_x(rng);
    const auto x = data.row(i);
    const bool shared_branch = unif01(rng) < 0.5;
    const double u = unif01(rng);
    double mean = 0.0;
    double var = 1.0;
    if (shared_branch) {
      const auto& a = model.shared[draw_index(shared_w, u)];
      mean = expert_eval(model.shared_family, a.params, x);
      var = a.variance;
    } else {
      const auto& a = model.routed[draw_index(gate_weights(model.gating, model.routed, x), u)];
      mean = expert_eval(model.routed_family, a.params, x);
      var = a.variance;
    }
    data.y[i] = mean + std::sqrt(var) * std_normal(rng);
  }
  return data;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  for (int u = 0; u < data.input_dim(); ++u) out << "x_" << u << ',';
  out << "y\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (int u = 0; u < data.input_dim(); ++u) out << data.x(i, u) << ',';
    out << data.y[i] << '\n';
  }
  if (!out) throw std::runtime_error("error while writing " + path.string());
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path.string() + ": empty file");
  int cols = 1;
  for (char c : line) cols += c == ',' ? 1 : 0;
  if (cols < 2 || line.substr(line.rfind(',') + 1) != "y") {
    throw std::invalid_argument(path.string() + ": header must be x_0,...,x_{d-1},y");
  }
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int seen = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) +
                                    ": bad number '" + cell + "'");
      }
      ++seen;
    }
    if (seen != cols) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(cols) + " fields");
    }
    ++rows;
  }
  Dataset data;
  data.x.resize(static_cast<Eigen::Index>(rows), cols - 1);
  data.y.resize(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    for (int u = 0; u < cols - 1; ++u) data.x(r, u) = values[r * cols + u];
    data.y[r] = values[r * cols + cols - 1];
  }
  data.validate();
  return data;
}

}  // namespace dsmoe
