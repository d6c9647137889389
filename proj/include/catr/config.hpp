#pragma once

// Run configuration (JSON, versioned schema, unknown keys rejected).

#include <cstdint>
#include <filesystem>
#include <string>

#include "catr/loss.hpp"
#include "catr/model.hpp"
#include "catr/synth.hpp"

namespace catr {

inline constexpr int kConfigSchemaVersion = 1;

struct OptimizerConfig {
  double learning_rate = 1e-4;
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;  // 0 disables intermediate checkpoints
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct DataConfig {
  std::string train_dir;
  std::string eval_dir;
  std::size_t height = 64;
  std::size_t width = 64;
};

struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  LossWeights loss;
  DataConfig data;

  void validate() const;
};

// C=64, L=2, N=8, T=5, 64x64 frames, lr 1e-4, 2000 steps, batch 4.
RunConfig desk_preset();
// Published training values: C=256, 50 queries, lr 1e-5, batch 4.
RunConfig published_preset();
RunConfig preset(const std::string& name);

std::string to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Replaces optimizer.seed with $CATR_SEED when set.
void apply_env_overrides(RunConfig& config);

}  // namespace catr
