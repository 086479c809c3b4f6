// Copyright 2026 The dsmoe Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dsmoe/model_json.hpp"

#include <fstream>
#include <stdexcept>

namespace dsmoe {

using nlohmann::json;

json model_to_json(const MixingMeasurePair& model) {
  json gating;
  switch (model.gating.kind) {
    case GateKind::SoftmaxDense: gating["kind"] = "softmax"; break;
    case GateKind::NormalizedSigmoid: gating["kind"] = "sigmoid"; break;
    case GateKind::SoftmaxTopK:
      gating["kind"] = "topk";
      gating["K"] = model.gating.top_k;
      break;
  }
  json shared = json::array();
  for (const auto& a : model.shared) {
    shared.push_back({{"omega", a.weight}, {"kappa", a.params}, {"tau", a.variance}});
  }
  json routed = json::array();
  for (const auto& a : model.routed) {
    routed.push_back(
        {{"beta0", a.bias}, {"beta1", a.gate}, {"eta", a.params}, {"nu", a.variance}});
  }
  return {{"input_dim", model.input_dim},
          {"gating", gating},
          {"shared_family", to_string(model.shared_family.kind)},
          {"routed_family", to_string(model.routed_family.kind)},
          {"shared", shared},
          {"routed", routed}};
}

MixingMeasurePair model_from_json(const json& j) {
  MixingMeasurePair m;
  try {
    m.input_dim = j.at("input_dim").get<int>();
    const auto& g = j.at("gating");
    const auto kind = g.at("kind").get<std::string>();
    if (kind == "softmax") {
      m.gating = {GateKind::SoftmaxDense, 0};
    } else if (kind == "sigmoid") {
      m.gating = {GateKind::NormalizedSigmoid, 0};
    } else if (kind == "topk") {
      m.gating = {GateKind::SoftmaxTopK, g.at("K").get<int>()};
    } else {
      throw std::invalid_argument("unknown gating kind '" + kind + "'");
    }
    m.shared_family = {expert_kind_from_string(j.at("shared_family").get<std::string>()),
                       m.input_dim};
    m.routed_family = {expert_kind_from_string(j.at("routed_family").get<std::string>()),
                       m.input_dim};
    for (const auto& a : j.at("shared")) {
      m.shared.push_back({a.at("omega").get<double>(), a.at("kappa").get<std::vector<double>>(),
                          a.at("tau").get<double>()});
    }
    for (const auto& a : j.at("routed")) {
      m.routed.push_back({a.at("beta0").get<double>(), a.at("beta1").get<std::vector<double>>(),
                          a.at("eta").get<std::vector<double>>(), a.at("nu").get<double>()});
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed model JSON: ") + e.what());
  }
  m.validate();
  return m;
}

MixingMeasurePair read_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("cannot parse " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

void write_model(const MixingMeasurePair& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << model_to_json(model).dump(2) << '\n';
}

}  // namespace dsmoe
