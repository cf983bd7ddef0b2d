#pragma once

// JSON mirrors of the configuration structs. Field names match the C++ members
// exactly; unknown keys are rejected, missing keys keep their defaults.

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"
#include "invdriver/model_config.hpp"
#include "invdriver/scene.hpp"

namespace invd::scene {
void to_json(nlohmann::json& j, const SceneGenConfig& cfg);
void from_json(const nlohmann::json& j, SceneGenConfig& cfg);
}  // namespace invd::scene

namespace invd {
void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);
}  // namespace invd

namespace invd::train {
struct LossWeights;
struct TrainConfig;
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);
}  // namespace invd::train

namespace invd::json_detail {

// Copies every listed field of `obj` out of `j`, throwing on keys the struct does not have.
template <class Visit, class T>
void read_fields(const nlohmann::json& j, T& obj, const char* type_name, Visit visit) {
  if (!j.is_object()) throw nlohmann::json::type_error::create(302, std::string(type_name) + " must be a JSON object", &j);
  std::vector<std::string> known;
  visit(obj, [&](const char* name, auto&) { known.emplace_back(name); });
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw nlohmann::json::other_error::create(501, std::string(type_name) + ": unknown field '" + key + "'", &j);
  visit(obj, [&](const char* name, auto& field) {
    if (j.contains(name)) j.at(name).get_to(field);
  });
}

template <class Visit, class T>
void write_fields(nlohmann::json& j, const T& obj, Visit visit) {
  j = nlohmann::json::object();
  visit(const_cast<T&>(obj), [&](const char* name, auto& field) { j[name] = field; });
}

}  // namespace invd::json_detail
