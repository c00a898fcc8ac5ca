#pragma once

// String-addressable model registry with JSON parameter schemas.

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invar/core.hpp"
#include "invar/models.hpp"

namespace invar::models {

struct ModelEntry {
  std::string id;
  std::string description;
  std::size_t dim = 0;
  nlohmann::json schema;    ///< JSON Schema of the parameter object
  nlohmann::json defaults;
  std::function<SdeSystem(const nlohmann::json&)> build;  ///< takes a complete (defaults-merged) object
  std::optional<std::string> epsilon_key;                 ///< parameter scanned by scan-eps, if any

  ManifoldSpec manifold() const { return ManifoldSpec::sphere(dim); }

  /// Validates `params` against the schema and fills in defaults.
  nlohmann::json resolve(const nlohmann::json& params) const {
    if (!params.is_null() && !params.is_object()) throw ConfigError("model params must be a JSON object");
    nlohmann::json merged = defaults;
    if (params.is_null()) return merged;
    const auto& props = schema.at("properties");
    for (const auto& [key, value] : params.items()) {
      if (!props.contains(key)) throw ConfigError("model '" + id + "' has no parameter '" + key + "'");
      const auto& type = props.at(key).at("type");
      if (type == "number" && !value.is_number()) throw ConfigError("parameter '" + key + "' must be a number");
      if (type == "array") {
        if (!value.is_array() || value.size() != 3 ||
            !std::all_of(value.begin(), value.end(), [](const auto& v) { return v.is_number(); })) {
          throw ConfigError("parameter '" + key + "' must be an array of 3 numbers");
        }
      }
      merged[key] = value;
    }
    return merged;
  }

  SdeSystem make(const nlohmann::json& params) const {
    const nlohmann::json p = resolve(params);
    try {
      return build(p);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("invalid parameters for '") + id + "': " + e.what());
    }
  }
};

namespace detail {

inline nlohmann::json number_schema(const std::string& doc) { return {{"type", "number"}, {"description", doc}}; }

inline nlohmann::json vector3_schema(const std::string& doc) {
  return {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 3}, {"maxItems", 3}, {"description", doc}};
}

inline nlohmann::json object_schema(nlohmann::json properties) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"additionalProperties", false}};
}

inline KuboParams kubo_params(const nlohmann::json& p) { return {p.at("a").get<double>(), p.at("sigma").get<double>()}; }

inline LLParams ll_params(const nlohmann::json& p) {
  LLParams out;
  const auto b = p.at("b").get<std::vector<double>>();
  out.b = Vector3(b[0], b[1], b[2]);
  if (p.contains("alpha")) out.alpha = p.at("alpha").get<double>();
  if (p.contains("epsilon")) out.epsilon = p.at("epsilon").get<double>();
  return out;
}

}  // namespace detail

inline const std::vector<ModelEntry>& model_registry() {
  using detail::number_schema;
  using detail::object_schema;
  using detail::vector3_schema;
  static const std::vector<ModelEntry> registry = [] {
    const auto kubo_schema = object_schema({{"a", number_schema("rotation rate")},
                                            {"sigma", number_schema("noise intensity")}});
    const nlohmann::json kubo_defaults = {{"a", 2.0}, {"sigma", 0.5}};
    const auto ll_schema = object_schema({{"b", vector3_schema("effective field")},
                                          {"alpha", number_schema("damping, >= 0")},
                                          {"epsilon", number_schema("noise amplitude, >= 0")}});
    const nlohmann::json ll_defaults = {{"b", {0.0, 0.0, 1.0}}, {"alpha", 0.5}, {"epsilon", 0.1}};

    std::vector<ModelEntry> r;
    r.push_back({"kubo", "Ito Kubo oscillator dX = J_a X dt + J_sigma X dW", 2, kubo_schema, kubo_defaults,
                 [](const nlohmann::json& p) { return kubo_system(detail::kubo_params(p)); }, "sigma"});
    r.push_back({"kubo-invariantized", "Kubo oscillator invariantized on the unit circle", 2, kubo_schema,
                 kubo_defaults,
                 [](const nlohmann::json& p) { return kubo_invariantized_closed_form(detail::kubo_params(p)); },
                 std::nullopt});
    r.push_back({"ll", "deterministic Landau-Lifshitz equation", 3,
                 object_schema({{"b", vector3_schema("effective field")}, {"alpha", number_schema("damping")}}),
                 {{"b", {0.0, 0.0, 1.0}}, {"alpha", 0.5}},
                 [](const nlohmann::json& p) { return ll_deterministic(detail::ll_params(p)); }, std::nullopt});
    r.push_back({"ll-stochastic", "Ito Landau-Lifshitz with a perturbed effective field", 3, ll_schema, ll_defaults,
                 [](const nlohmann::json& p) { return ll_stochastic(detail::ll_params(p)); }, "epsilon"});
    r.push_back({"ll-invariantized", "invariantized Ito Landau-Lifshitz equation", 3, ll_schema, ll_defaults,
                 [](const nlohmann::json& p) { return ll_invariantized(detail::ll_params(p)); }, std::nullopt});
    r.push_back({"ll-modified", "invariantized LL drift with scalar noise along b", 3, ll_schema, ll_defaults,
                 [](const nlohmann::json& p) { return ll_modified(detail::ll_params(p)); }, std::nullopt});
    r.push_back({"larmor", "Larmor precession d mu/dt = -mu ^ b", 3,
                 object_schema({{"b", vector3_schema("effective field")}}), {{"b", {0.0, 0.0, 1.0}}},
                 [](const nlohmann::json& p) { return larmor_system(detail::ll_params(p).b); }, std::nullopt});
    return r;
  }();
  return registry;
}

inline const ModelEntry& find_model(const std::string& id) {
  const auto& r = model_registry();
  auto it = std::find_if(r.begin(), r.end(), [&](const ModelEntry& e) { return e.id == id; });
  if (it == r.end()) throw ConfigError("unknown model id '" + id + "'");
  return *it;
}

}  // namespace invar::models
