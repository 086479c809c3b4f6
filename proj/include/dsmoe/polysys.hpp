// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <cstdint>
#include <string>

namespace dsmoe {

enum class SystemKind { R1, R2 };

/// Variable layout, grouped by symbol:
///   R1: [s1(m), s2(m), s3(m)]
///   R2: [t1(m), t2(m), t3(m), t4(m), t5(m)]   (d = 1 only)
struct SystemInstance {
  SystemKind kind = SystemKind::R1;
  int m = 1;
  int r = 1;
  int d = 1;

  int num_vars() const;
  int num_equations() const;
  void validate() const;
};

SystemKind system_kind_from_string(const std::string& name);

Vec residual(const SystemInstance& sys, const Vec& vars);

struct SearchResult {
  bool found = false;
  double residual_norm = 0.0;  // best over all restarts
  Vec vars;                    // best candidate, normalized
  int restarts = 0;
};

/// Multi-start damped Gauss-Newton on the squared residual. The non-triviality
/// constraints hold by construction: |s3|, |t5| >= 0.1 and max |s1| (max |t4|)
/// is rescaled to 1. `found` means residual_norm < 1e-8; a miss is not a proof.
SearchResult search_nontrivial(const SystemInstance& sys, int restarts, std::uint64_t seed);

}  // namespace dsmoe
