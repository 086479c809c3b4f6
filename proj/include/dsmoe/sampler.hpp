// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <cstdint>
#include <filesystem>

namespace dsmoe {

struct SamplerConfig {
  Eigen::Index n = 1000;
  double input_low = -3.0;
  double input_high = 3.0;
  std::uint64_t seed = 0;
};

/// Draws n i.i.d. pairs: X uniform on the input box, then Y from the
/// conditional density (branch 1/2-1/2, component, Gaussian).
Dataset sample_dataset(const MixingMeasurePair& model, const SamplerConfig& cfg);

/// CSV with header x_0,...,x_{d-1},y and 17 significant digits.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace dsmoe
