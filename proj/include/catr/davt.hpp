#pragma once

// Decoupled audio-visual transformer blocks.
//
// Each block runs three attentions instead of one joint attention over all
// T*(P+1) tokens:
//   spatial fusion      per frame, self-attention over P video tokens + 1 audio token
//   temporal A-to-V     per spatial position, video frames attend over audio frames
//   temporal V-to-A     audio frames attend over spatially pooled video frames
// Every attention is followed by a residual connection and layer norm.

#include <span>
#include <utility>
#include <vector>

#include "catr/av_features.hpp"
#include "catr/nn.hpp"

namespace catr {

struct DavtBlockParams {
  AttentionParams spatial;
  AttentionParams temporal_av;
  AttentionParams temporal_va;
  LayerNormParams norm_spatial;
  LayerNormParams norm_av;
  LayerNormParams norm_va;
  LayerNormParams norm_merge;
  std::size_t heads = 4;
  // Ablation switch: when false the A-to-V step passes video tokens through unchanged.
  bool use_temporal_av = true;
};

DavtBlockParams make_davt_block(ParamStore& store, const std::string& name, std::size_t channels,
                                std::size_t heads, Rng& rng);

std::pair<VideoFeatures, AudioFeatures> spatial_fusion(const VideoFeatures& v, const AudioFeatures& a,
                                                       const DavtBlockParams& p);
VideoFeatures temporal_av(const VideoFeatures& v, const AudioFeatures& a, const DavtBlockParams& p);
// Returns (video-shaped broadcast of the updated audio, updated audio).
std::pair<VideoFeatures, AudioFeatures> temporal_va(const VideoFeatures& v, const AudioFeatures& a,
                                                    const DavtBlockParams& p);
std::pair<VideoFeatures, AudioFeatures> davt_block(const VideoFeatures& v, const AudioFeatures& a,
                                                   const DavtBlockParams& p);

struct EncoderOutput {
  std::vector<VideoFeatures> block_video;  // one entry per block, in order
  AudioFeatures audio;                     // audio after the last block
};

EncoderOutput encode(const VideoFeatures& v, const AudioFeatures& a, std::span<const DavtBlockParams> blocks);

}  // namespace catr
