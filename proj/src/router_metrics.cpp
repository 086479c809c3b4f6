// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/router_metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dsmoe {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t intersection_size(const ExpertSet& a, const ExpertSet& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

int RoutingLog::checkpoint_index(std::int64_t id) const {
  const auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), id);
  if (it == checkpoints.end() || *it != id) {
    throw std::invalid_argument("unknown checkpoint " + std::to_string(id));
  }
  return static_cast<int>(it - checkpoints.begin());
}

void RoutingLog::validate() const {
  if (checkpoints.empty() || tokens.empty()) throw std::invalid_argument("empty routing log");
  if (k < 1) throw std::invalid_argument("routing log needs k >= 1");
  if (sets.size() != checkpoints.size()) throw std::invalid_argument("routing log shape mismatch");
  for (const auto& per_token : sets) {
    if (per_token.size() != tokens.size()) {
      throw std::invalid_argument("every checkpoint must cover the same tokens");
    }
    for (const auto& s : per_token) {
      if (static_cast<int>(s.size()) != k) throw std::invalid_argument("expert set of wrong size");
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 0 || s[i] >= num_experts || (i > 0 && s[i] <= s[i - 1])) {
          throw std::invalid_argument("expert ids must be sorted, distinct and in range");
        }
      }
    }
  }
}

RoutingLog parse_routing_log(std::istream& in) {
  struct Row {
    ExpertSet set;
    std::vector<double> weights;
  };
  std::map<std::int64_t, std::map<std::int64_t, Row>> rows;
  std::string line;
  std::size_t lineno = 0;
  int k = -1;
  int max_id = -1;
  int with_weights = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("checkpoint", 0) == 0) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 3 && cols.size() != 4) {
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": expected checkpoint,token,experts[,weights]");
    }
    const auto ckpt = parse_int(cols[0], lineno);
    const auto token = parse_int(cols[1], lineno);
    Row row;
    for (const auto& id : split(cols[2], '|')) {
      const auto v = parse_int(id, lineno);
      if (v < 0) throw std::runtime_error("line " + std::to_string(lineno) + ": negative expert id");
      row.set.push_back(static_cast<int>(v));
    }
    if (cols.size() == 4) {
      for (const auto& w : split(cols[3], '|')) row.weights.push_back(parse_double(w, lineno));
      if (row.weights.size() != row.set.size()) {
        throw std::runtime_error("line " + std::to_string(lineno) + ": weights and experts differ in count");
      }
    }
    const int has_w = cols.size() == 4 ? 1 : 0;
    if (with_weights >= 0 && has_w != with_weights) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": weights column is not consistent");
    }
    with_weights = has_w;
    // Sort ids, carrying weights along.
    std::vector<std::size_t> order(row.set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return row.set[a] < row.set[b]; });
    Row sorted;
    for (auto i : order) {
      sorted.set.push_back(row.set[i]);
      if (has_w) sorted.weights.push_back(row.weights[i]);
    }
    if (std::adjacent_find(sorted.set.begin(), sorted.set.end()) != sorted.set.end()) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": duplicate expert id");
    }
    if (k >= 0 && static_cast<int>(sorted.set.size()) != k) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": expected " + std::to_string(k) +
                               " experts, got " + std::to_string(sorted.set.size()));
    }
    k = static_cast<int>(sorted.set.size());
    max_id = std::max(max_id, sorted.set.back());
    if (!rows[ckpt].emplace(token, std::move(sorted)).second) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": repeated (checkpoint, token)");
    }
  }
  if (rows.empty()) throw std::runtime_error("empty routing log");

  RoutingLog log;
  log.k = k;
  log.num_experts = max_id + 1;
  for (const auto& [token, row] : rows.begin()->second) log.tokens.push_back(token);
  for (const auto& [ckpt, per_token] : rows) {
    log.checkpoints.push_back(ckpt);
    if (per_token.size() != log.tokens.size()) {
      throw std::runtime_error("checkpoint " + std::to_string(ckpt) + " covers " +
                               std::to_string(per_token.size()) + " tokens, expected " +
                               std::to_string(log.tokens.size()));
    }
    auto& sets = log.sets.emplace_back();
    std::vector<std::vector<double>>* weights = nullptr;
    if (with_weights == 1) weights = &log.weights.emplace_back();
    std::size_t i = 0;
    for (const auto& [token, row] : per_token) {
      if (token != log.tokens[i++]) {
        throw std::runtime_error("checkpoint " + std::to_string(ckpt) + " has a different token set");
      }
      sets.push_back(row.set);
      if (weights) weights->push_back(row.weights);
    }
  }
  log.validate();
  return log;
}

RoutingLog ingest_routing_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open routing log " + path.string());
  return parse_routing_log(in);
}

double saturation(const RoutingLog& log, std::int64_t t, std::int64_t T) {
  const auto& a = log.sets[log.checkpoint_index(t)];
  const auto& b = log.sets[log.checkpoint_index(T)];
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += static_cast<double>(intersection_size(a[i], b[i]));
  return total / (static_cast<double>(a.size()) * log.k);
}

double change_rate(const RoutingLog& log, std::int64_t t) {
  const int idx = log.checkpoint_index(t);
  if (idx + 1 >= static_cast<int>(log.checkpoints.size())) {
    throw std::invalid_argument("checkpoint " + std::to_string(t) + " has no successor");
  }
  const auto& a = log.sets[idx];
  const auto& b = log.sets[idx + 1];
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += static_cast<double>(b[i].size() - intersection_size(a[i], b[i]));
  }
  return total / (static_cast<double>(a.size()) * log.k);
}

double jain_index(std::span<const double> r) {
  if (r.empty()) throw std::invalid_argument("utilization vector is empty");
  double s = 0.0;
  double s2 = 0.0;
  for (double v : r) {
    if (v < 0.0) throw std::invalid_argument("utilization entries must be nonnegative");
    s += v;
    s2 += v * v;
  }
  if (s2 == 0.0) throw std::invalid_argument("utilization vector is all zero");
  return s * s / (static_cast<double>(r.size()) * s2);
}

std::vector<double> utilization(const RoutingLog& log, std::int64_t t, UtilizationMode mode) {
  const int idx = log.checkpoint_index(t);
  if (mode == UtilizationMode::Weight && !log.has_weights()) {
    throw std::invalid_argument("routing log has no weights column");
  }
  std::vector<double> r(log.num_experts, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < log.sets[idx].size(); ++i) {
    const auto& s = log.sets[idx][i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double w = mode == UtilizationMode::Tokens ? 1.0 : log.weights[idx][i][j];
      r[s[j]] += w;
      total += w;
    }
  }
  if (total > 0.0) {
    for (auto& v : r) v /= total;
  }
  return r;
}

}  // namespace dsmoe
