#pragma once

// Blockwise-encoded gate: channel-wise sigmoid gates that weight and fuse the
// video outputs of successive encoder blocks.

#include <span>
#include <vector>

#include "catr/av_features.hpp"
#include "catr/nn.hpp"

namespace catr {

struct GateParams {
  Linear gate_conv;  // 1x1 conv, 2C -> 2G
  Linear out_conv;   // 1x1 conv, C -> C
  std::size_t channels = 0;
  std::size_t gate_channels = 0;  // G; each gate value covers C/G consecutive channels
};

GateParams make_gate(ParamStore& store, const std::string& name, std::size_t channels, std::size_t gate_channels,
                     Rng& rng);

struct GatePairResult {
  Tensor gate_prev;  // [G], in (0,1)
  Tensor gate_next;  // [G], in (0,1)
  VideoFeatures fused;
};

GatePairResult gate_pair(const VideoFeatures& prev, const VideoFeatures& next, const GateParams& p);

// Left fold of gate_pair over the block outputs; one GateParams per fold step.
VideoFeatures gate_fold(std::span<const VideoFeatures> blocks, std::span<const GateParams> gates);

}  // namespace catr
