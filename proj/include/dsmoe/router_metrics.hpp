// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace dsmoe {

using ExpertSet = std::vector<int>;  // sorted, distinct expert ids

/// Top-k routing decisions of one layer at several checkpoints.
struct RoutingLog {
  std::vector<std::int64_t> checkpoints;          // ascending
  std::vector<std::int64_t> tokens;               // ascending, same at every checkpoint
  int k = 0;
  int num_experts = 0;                            // max id + 1
  std::vector<std::vector<ExpertSet>> sets;       // [checkpoint][token]
  std::vector<std::vector<std::vector<double>>> weights;  // optional, parallel to sets

  int checkpoint_index(std::int64_t id) const;    // throws on unknown id
  bool has_weights() const { return !weights.empty(); }
  void validate() const;
};

/// CSV rows `checkpoint,token,experts[,weights]`, ids and weights separated by
/// '|'. An optional header line starting with "checkpoint" is skipped.
RoutingLog parse_routing_log(std::istream& in);
RoutingLog ingest_routing_log(const std::filesystem::path& path);

/// Mean over tokens of |E(t) & E(T)| / k.
double saturation(const RoutingLog& log, std::int64_t t, std::int64_t T);

/// Mean over tokens of |E(next) \ E(t)| / k, next being the following checkpoint.
double change_rate(const RoutingLog& log, std::int64_t t);

/// (sum r)^2 / (n sum r^2).
double jain_index(std::span<const double> r);

enum class UtilizationMode { Tokens, Weight };

/// Share of tokens (or of routing weight) received by each expert.
std::vector<double> utilization(const RoutingLog& log, std::int64_t t, UtilizationMode mode);

}  // namespace dsmoe
