// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsmoe/core_model.hpp"

#include <json.hpp>

#include <filesystem>

namespace dsmoe {

/// Model-spec JSON:
///   {input_dim, gating:{kind, K?}, shared_family, routed_family,
///    shared:[{omega,kappa,tau}], routed:[{beta0,beta1,eta,nu}]}
nlohmann::json model_to_json(const MixingMeasurePair& model);
MixingMeasurePair model_from_json(const nlohmann::json& j);

MixingMeasurePair read_model(const std::filesystem::path& path);
void write_model(const MixingMeasurePair& model, const std::filesystem::path& path);

}  // namespace dsmoe
