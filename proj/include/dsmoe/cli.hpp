// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dsmoe {

/// Runs the command line front end. Returns 0 on success, 2 on a usage error
/// and 1 on any runtime error; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dsmoe
