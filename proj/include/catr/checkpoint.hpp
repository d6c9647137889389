#pragma once

// Checkpoint directory: manifest.json (config, step, name -> file) plus one
// tensor file per parameter.

#include <filesystem>

#include "catr/config.hpp"
#include "catr/model.hpp"

namespace catr {

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const std::filesystem::path& dir, const CatrModel& model, const RunConfig& config,
                     std::size_t step);

struct LoadedCheckpoint {
  RunConfig config;
  CatrModel model;
  std::size_t step = 0;
};

// `path` is the checkpoint directory or its manifest.json.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace catr
