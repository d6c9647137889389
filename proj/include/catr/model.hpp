#pragma once

// The full pipeline: feature stubs -> stacked DAVT blocks -> blockwise gate ->
// segmentation features -> audio-constrained query decoder -> dynamic masks
// and reference scores.

#include <cstdint>
#include <vector>

#include "catr/davt.hpp"
#include "catr/decoder.hpp"
#include "catr/features.hpp"
#include "catr/gate.hpp"

namespace catr {

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t num_queries = 8;
  std::size_t decoder_layers = 3;
  std::size_t gate_channels = 64;
  std::size_t frames = 5;
  std::vector<std::size_t> fpn_levels = {4, 8};
  bool use_gate = true;
  bool use_temporal_av = true;

  // Throws ConfigError on any inconsistent field.
  void validate() const;
};

struct ModelOutput {
  SegFeatures seg;
  Tensor decoded;  // [N, C]
  DynamicMasks masks;
  ReferenceScores refs;
};

class CatrModel {
 public:
  CatrModel(ModelConfig config, std::uint64_t seed);
  CatrModel(CatrModel&&) = default;
  CatrModel& operator=(CatrModel&&) = default;
  CatrModel(const CatrModel&) = delete;
  CatrModel& operator=(const CatrModel&) = delete;

  // video [T, H, W, 3], raw audio [T, 128]
  ModelOutput forward(const Tensor& video, const Tensor& audio) const;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  ModelConfig config_;
  ParamStore store_;
  FeatureStubParams stub_;
  Tensor temporal_pos_;  // [T, C]
  std::vector<DavtBlockParams> blocks_;
  std::vector<GateParams> gates_;
  FpnParams fpn_;
  QueryDecoderParams decoder_;
};

}  // namespace catr
