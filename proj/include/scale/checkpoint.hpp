#pragma once

// Model checkpoints: a flat little-endian float64 file holding every layer's
// parameters back to back, plus a JSON manifest (architecture, per-layer
// kind/shape/d_l, init seed) from which the Model is rebuilt.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "scale/model.hpp"

namespace scale {

nlohmann::json model_manifest(const Model& model, const std::string& config_hash = {});
Model model_from_manifest(const nlohmann::json& manifest);

void save_model(const Model& model, const std::filesystem::path& model_path,
                const std::filesystem::path& manifest_path, const std::string& config_hash = {});
Model load_model(const std::filesystem::path& model_path, const std::filesystem::path& manifest_path);

/// `<stem>.model` with manifest `<stem>.json` in the same directory.
void save_model(const Model& model, const std::filesystem::path& stem, const std::string& config_hash = {});
Model load_model(const std::filesystem::path& stem);

}  // namespace scale
