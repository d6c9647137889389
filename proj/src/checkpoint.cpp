#include "catr/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "catr/tensor_io.hpp"

namespace catr {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& dir, const CatrModel& model, const RunConfig& config,
                     std::size_t step) {
  std::filesystem::create_directories(dir);
  json params = json::array();
  std::size_t i = 0;
  for (const auto& [name, tensor] : model.params().entries()) {
    char file[32];
    std::snprintf(file, sizeof file, "p%04zu.t", i++);
    write_tensor(dir / file, tensor);
    params.push_back({{"name", name}, {"file", file}, {"shape", tensor.shape()}});
  }
  const json manifest = {{"schema", "catr-checkpoint"},
                         {"version", kCheckpointSchemaVersion},
                         {"step", step},
                         {"config", json::parse(to_json(config))},
                         {"params", params}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto manifest_path = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  const auto dir = manifest_path.parent_path();
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open checkpoint " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("schema", "") != "catr-checkpoint" || manifest.value("version", 0) != kCheckpointSchemaVersion) {
    throw FormatError(manifest_path.string() + ": unsupported checkpoint schema");
  }
  RunConfig config = config_from_json(manifest.at("config").dump());
  CatrModel model(config.model, config.optimizer.seed);
  const auto& entries = model.params().entries();
  const json& params = manifest.at("params");
  if (params.size() != entries.size()) {
    throw ConfigError(manifest_path.string() + ": checkpoint has " + std::to_string(params.size()) +
                      " parameters, model expects " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, target] = entries[i];
    if (params[i].at("name").get<std::string>() != name) {
      throw ConfigError(manifest_path.string() + ": parameter " + std::to_string(i) + " is '" +
                        params[i].at("name").get<std::string>() + "', model expects '" + name + "'");
    }
    const auto file = dir / params[i].at("file").get<std::string>();
    const Tensor loaded = read_tensor(file);
    if (loaded.shape() != target.shape()) {
      throw ConfigError(file.string() + ": shape " + shape_str(loaded.shape()) + " does not match parameter '" + name +
                        "' " + shape_str(target.shape()));
    }
    Tensor dst = target;
    std::copy(loaded.data().begin(), loaded.data().end(), dst.mutable_data().begin());
  }
  return {std::move(config), std::move(model), manifest.at("step").get<std::size_t>()};
}

}  // namespace catr
