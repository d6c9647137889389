#include "catr/features.hpp"

#include <cmath>

namespace catr {

void validate(const VideoFeatures& v) {
  if (!v.tokens.defined() || v.tokens.rank() != 3) throw DimensionError("video features must be [T,P,C]");
  if (v.tokens.dim(1) != v.h * v.w) {
    throw DimensionError("video features: P=" + std::to_string(v.tokens.dim(1)) + " but grid is " +
                         std::to_string(v.h) + "x" + std::to_string(v.w));
  }
  for (double x : v.tokens.data()) {
    if (!std::isfinite(x)) throw NumericError("video features contain non-finite values");
  }
}

void validate(const AudioFeatures& a) {
  if (!a.tokens.defined() || a.tokens.rank() != 2) throw DimensionError("audio features must be [T,C]");
  for (double x : a.tokens.data()) {
    if (!std::isfinite(x)) throw NumericError("audio features contain non-finite values");
  }
}

const Tensor& VisualPyramid::at_stride(std::size_t stride) const {
  for (std::size_t i = 0; i < kPyramidStrides.size() && i < levels.size(); ++i) {
    if (kPyramidStrides[i] == stride) return levels[i];
  }
  throw ConfigError("no pyramid level at stride " + std::to_string(stride));
}

VideoFeatures VisualPyramid::deepest() const {
  const Tensor& top = levels.back();
  const std::size_t t = top.dim(0), h = top.dim(1), w = top.dim(2), c = top.dim(3);
  return {reshape(top, {t, h * w, c}), h, w};
}

FeatureStubParams make_feature_stub(ParamStore& store, std::size_t channels, Rng& rng) {
  if (channels < 4 || channels % 4 != 0) {
    throw ConfigError("feature stub channels must be a positive multiple of 4, got " + std::to_string(channels));
  }
  FeatureStubParams p;
  p.channels = channels;
  const std::array<std::size_t, 4> widths = {3, channels / 4, channels / 2, channels};
  for (std::size_t i = 0; i < 3; ++i) {
    p.convs[i] = make_conv(store, "stub.conv" + std::to_string(i + 1), 3, widths[i], widths[i + 1], 2, rng);
  }
  p.audio = make_linear(store, "stub.audio", kRawAudioDim, channels, rng);
  return p;
}

VisualPyramid extract_visual(const Tensor& video, const FeatureStubParams& p) {
  if (video.rank() != 4 || video.dim(3) != 3) {
    throw DimensionError("extract_visual: expected [T,H,W,3], got " + shape_str(video.shape()));
  }
  if (video.dim(1) % 8 != 0 || video.dim(2) % 8 != 0) {
    throw ConfigError("extract_visual: frame size " + std::to_string(video.dim(1)) + "x" +
                      std::to_string(video.dim(2)) + " is not divisible by 8");
  }
  VisualPyramid pyr;
  Tensor x = video;
  for (const auto& conv : p.convs) {
    x = relu(conv(x));
    pyr.levels.push_back(x);
  }
  return pyr;
}

AudioFeatures embed_audio(const Tensor& raw, const FeatureStubParams& p) {
  if (raw.rank() != 2 || raw.dim(1) != kRawAudioDim) {
    throw DimensionError("embed_audio: expected [T,128], got " + shape_str(raw.shape()));
  }
  return {p.audio(raw)};
}

}  // namespace catr
