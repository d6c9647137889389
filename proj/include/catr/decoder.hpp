#pragma once

// Audio-constrained query decoding.
//
// N learnable object-sequence queries are conditioned on the temporal mean of
// the audio (used as their positional term), decoded against the
// segmentation features, and turned into per-frame dynamic 1x1 kernels and
// per-frame reference scores.

#include <vector>

#include "catr/av_features.hpp"
#include "catr/features.hpp"
#include "catr/nn.hpp"

namespace catr {

// [T, H/8, W/8, C]
struct SegFeatures {
  Tensor maps;

  std::size_t frames() const { return maps.dim(0); }
  std::size_t h() const { return maps.dim(1); }
  std::size_t w() const { return maps.dim(2); }
  std::size_t channels() const { return maps.dim(3); }
};

struct FpnParams {
  std::vector<std::size_t> level_strides;  // pyramid levels merged in, subset of {2,4,8}
  std::vector<Linear> laterals;            // one 1x1 projection per selected level
  Conv2d smooth;                           // 3x3, C -> C
};

FpnParams make_fpn(ParamStore& store, std::size_t channels, const std::vector<std::size_t>& level_strides, Rng& rng);

SegFeatures build_seg_features(const VideoFeatures& final_video, const VisualPyramid& pyramid, const FpnParams& p);

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Linear ffn_in;
  Linear ffn_out;
  LayerNormParams norm_self, norm_cross, norm_ffn;
};

struct QueryDecoderParams {
  Tensor query_embed;  // [N, C]
  std::vector<DecoderLayerParams> layers;
  Linear kernel_hidden;  // 2C -> C
  Linear kernel_out;     // C -> C+1
  Linear reference;      // 2C -> 2
};

QueryDecoderParams make_query_decoder(ParamStore& store, std::size_t channels, std::size_t heads,
                                      std::size_t num_queries, std::size_t layers, Rng& rng);

// queries [N, C] -> decoded [N, C]
Tensor decode_queries(const Tensor& queries, const AudioFeatures& audio, const SegFeatures& seg,
                      const QueryDecoderParams& p);

struct DynamicMasks {
  Tensor kernels;  // [N, T, C+1]: weights then bias
  Tensor logits;   // [N, T, h, w]
  Tensor probs;    // sigmoid(logits)
};

DynamicMasks dynamic_masks(const Tensor& decoded, const AudioFeatures& audio, const SegFeatures& seg,
                           const QueryDecoderParams& p);

struct ReferenceScores {
  Tensor logits;  // [N, T, 2]
  Tensor probs;   // softmax over the last axis; index 1 = referred and visible
};

ReferenceScores reference_head(const Tensor& decoded, const AudioFeatures& audio, const QueryDecoderParams& p);

}  // namespace catr
