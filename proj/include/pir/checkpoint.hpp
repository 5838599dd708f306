#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pir/graph.hpp"
#include "pir/tensor.hpp"

namespace pir {

inline constexpr const char* kCheckpointVersion = "pir-ckpt-1";

inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json params = nlohmann::json::object();
  for (int i = 0; i < store.count(); ++i) {
    const Tensor& v = store.value_at(i);
    params[store.name_at(i)] = {{"shape", v.shape}, {"data", v.data}};
  }
  return params;
}

inline void params_from_json(const nlohmann::json& params, ParamStore& store) {
  for (int i = 0; i < store.count(); ++i) {
    const std::string& name = store.name_at(i);
    if (!params.contains(name)) {
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    }
    const auto& entry = params.at(name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    auto data = entry.at("data").get<std::vector<double>>();
    Tensor& value = store.value(name);
    if (shape != value.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "': got " +
                               shape_str(shape) + ", expected " + shape_str(value.shape));
    }
    value.data = std::move(data);
  }
}

inline void save_param_checkpoint(const ParamStore& store, const std::string& path) {
  nlohmann::json doc;
  doc["version"] = kCheckpointVersion;
  doc["params"] = params_to_json(store);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
}

inline nlohmann::json load_checkpoint_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.contains("version") || doc.at("version").get<std::string>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: '" + path + "' has unsupported version");
  }
  return doc;
}

inline void load_param_checkpoint(const std::string& path, ParamStore& store) {
  const nlohmann::json doc = load_checkpoint_json(path);
  params_from_json(doc.at("params"), store);
}

}  // namespace pir
