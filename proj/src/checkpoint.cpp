#include "scale/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "scale/error.hpp"

namespace scale {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
}

json layer_json(const LayerSpec& s) {
  json j;
  j["kind"] = std::string(to_string(s.kind));
  j["activation"] = std::string(to_string(s.activation));
  j["d"] = s.param_count();
  if (s.kind == LayerKind::dense) {
    j["in_dim"] = s.in_dim;
    j["out_dim"] = s.out_dim;
  } else {
    j["in_channels"] = s.in_channels;
    j["out_channels"] = s.out_channels;
    j["kernel"] = s.kernel;
    j["height"] = s.height;
    j["width"] = s.width;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const auto act = j.at("activation").get<std::string>() == "relu" ? Activation::relu : Activation::none;
  const auto kind = j.at("kind").get<std::string>();
  LayerSpec s;
  if (kind == "dense") {
    s = LayerSpec::dense(j.at("in_dim").get<std::size_t>(), j.at("out_dim").get<std::size_t>(), act);
  } else if (kind == "conv2d") {
    s = LayerSpec::conv2d(j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                          j.at("kernel").get<std::size_t>(), j.at("height").get<std::size_t>(),
                          j.at("width").get<std::size_t>(), act);
  } else {
    throw FormatError("manifest: unknown layer kind '" + kind + "'");
  }
  if (j.at("d").get<std::size_t>() != s.param_count()) throw FormatError("manifest: layer d does not match its shape");
  return s;
}

}  // namespace

json model_manifest(const Model& model, const std::string& config_hash) {
  json m;
  m["format"] = "scale-model-v1";
  m["arch_id"] = std::string(to_string(model.arch()));
  m["seed"] = model.seed();
  m["total_params"] = model.total_params();
  json layers = json::array();
  for (const auto& s : model.layers()) layers.push_back(layer_json(s));
  m["layers"] = layers;
  if (!config_hash.empty()) m["config_hash"] = config_hash;
  return m;
}

Model model_from_manifest(const json& manifest) {
  try {
    if (manifest.at("format").get<std::string>() != "scale-model-v1") throw FormatError("manifest: unsupported format");
    std::vector<LayerSpec> layers;
    for (const auto& lj : manifest.at("layers")) layers.push_back(layer_from_json(lj));
    return Model(parse_arch(manifest.at("arch_id").get<std::string>()), std::move(layers),
                 manifest.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

void save_model(const Model& model, const fs::path& model_path, const fs::path& manifest_path,
                const std::string& config_hash) {
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  std::ofstream out(model_path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + model_path.string());
  for (const auto& layer : model.all_params()) {
    for (double v : layer) {
      std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw FormatError("short write to " + model_path.string());
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw FormatError("cannot write " + manifest_path.string());
  mf << model_manifest(model, config_hash).dump(2) << "\n";
}

Model load_model(const fs::path& model_path, const fs::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw FormatError("missing manifest " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  Model model = model_from_manifest(manifest);

  std::ifstream in(model_path, std::ios::binary);
  if (!in) throw FormatError("missing checkpoint " + model_path.string());
  const auto expected = static_cast<std::uintmax_t>(model.total_params() * sizeof(double));
  if (fs::file_size(model_path) != expected) {
    throw FormatError(model_path.string() + ": size " + std::to_string(fs::file_size(model_path)) +
                      " bytes, manifest implies " + std::to_string(expected));
  }
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto p = model.mutable_params(l);
    for (double& v : p) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      v = std::bit_cast<double>(to_little(bits));
    }
  }
  if (!in) throw FormatError("truncated checkpoint " + model_path.string());
  return model;
}

void save_model(const Model& model, const fs::path& stem, const std::string& config_hash) {
  fs::path m = stem, j = stem;
  m += ".model";
  j += ".json";
  save_model(model, m, j, config_hash);
}

Model load_model(const fs::path& stem) {
  fs::path m = stem, j = stem;
  m += ".model";
  j += ".json";
  return load_model(m, j);
}

}  // namespace scale
