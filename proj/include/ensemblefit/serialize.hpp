#pragma once

#include <string>

#include <json.hpp>

#include "ensemblefit/layers.hpp"

namespace ensemblefit {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const LayeredModel& model);
LayeredModel model_from_json(const nlohmann::json& doc);

void save_model(const LayeredModel& model, const std::string& path);
LayeredModel load_model(const std::string& path);

} // namespace ensemblefit
