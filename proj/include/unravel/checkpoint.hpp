#pragma once

#include <filesystem>
#include "json.hpp"

#include "unravel/model.hpp"

namespace unravel {

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Binary layout: "UCOT", u32 version, u64 header length, JSON header
// (config plus caller metadata), then the float32 parameter buffer.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unravel
