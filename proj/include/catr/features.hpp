#pragma once

// Small trainable stand-ins for the visual backbone and the audio embedder.

#include <array>
#include <vector>

#include "catr/av_features.hpp"
#include "catr/nn.hpp"

namespace catr {

inline constexpr std::size_t kRawAudioDim = 128;
inline constexpr std::array<std::size_t, 3> kPyramidStrides = {2, 4, 8};

// Feature maps at strides 2, 4 and 8 of the input frame, each [T, H/s, W/s, C_s].
struct VisualPyramid {
  std::vector<Tensor> levels;

  const Tensor& at_stride(std::size_t stride) const;
  // Deepest level flattened to [T, P, C].
  VideoFeatures deepest() const;
};

struct FeatureStubParams {
  std::array<Conv2d, 3> convs;  // stride-2 3x3, channels C/4, C/2, C
  Linear audio;                 // 128 -> C
  std::size_t channels = 0;
};

FeatureStubParams make_feature_stub(ParamStore& store, std::size_t channels, Rng& rng);

// video [T, H, W, 3] with H, W divisible by 8.
VisualPyramid extract_visual(const Tensor& video, const FeatureStubParams& p);
// raw [T, 128] -> [T, C]
AudioFeatures embed_audio(const Tensor& raw, const FeatureStubParams& p);

}  // namespace catr
