#include "catr/decoder.hpp"

#include <algorithm>

namespace catr {

FpnParams make_fpn(ParamStore& store, std::size_t channels, const std::vector<std::size_t>& level_strides,
                   Rng& rng) {
  FpnParams p;
  for (std::size_t s : level_strides) {
    const auto it = std::find(kPyramidStrides.begin(), kPyramidStrides.end(), s);
    if (it == kPyramidStrides.end()) throw ConfigError("fpn level stride must be 2, 4 or 8, got " + std::to_string(s));
    const std::size_t level_channels = channels * s / 8;  // C/4, C/2, C
    p.level_strides.push_back(s);
    p.laterals.push_back(make_linear(store, "fpn.lateral_s" + std::to_string(s), level_channels, channels, rng));
  }
  p.smooth = make_conv(store, "fpn.smooth", 3, channels, channels, 1, rng);
  return p;
}

SegFeatures build_seg_features(const VideoFeatures& final_video, const VisualPyramid& pyramid, const FpnParams& p) {
  const Tensor& deepest = pyramid.levels.back();
  const std::size_t t = final_video.frames(), c = final_video.channels();
  if (deepest.dim(1) != final_video.h || deepest.dim(2) != final_video.w) {
    throw ConfigError("build_seg_features: encoder grid " + std::to_string(final_video.h) + "x" +
                      std::to_string(final_video.w) + " is not the stride-8 pyramid grid");
  }
  Tensor merged = reshape(final_video.tokens, {t, final_video.h, final_video.w, c});
  for (std::size_t i = 0; i < p.level_strides.size(); ++i) {
    const std::size_t s = p.level_strides[i];
    Tensor level = pyramid.at_stride(s);
    if (level.dim(1) * s != final_video.h * 8 || level.dim(2) * s != final_video.w * 8) {
      throw ConfigError("build_seg_features: pyramid level at stride " + std::to_string(s) +
                        " has an inconsistent size");
    }
    // Finer levels are brought onto the stride-8 grid before the lateral projection.
    if (s < 8) level = avg_pool2d(level, 8 / s);
    merged = merged + p.laterals[i](level);
  }
  return {p.smooth(merged)};
}

QueryDecoderParams make_query_decoder(ParamStore& store, std::size_t channels, std::size_t heads,
                                      std::size_t num_queries, std::size_t layers, Rng& rng) {
  if (num_queries == 0) throw ConfigError("num_queries must be at least 1");
  QueryDecoderParams p;
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> embed(num_queries * channels);
  for (double& v : embed) v = dist(rng);
  p.query_embed = store.add("decoder.query_embed", Tensor::from({num_queries, channels}, std::move(embed)));
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string n = "decoder.layer" + std::to_string(i);
    DecoderLayerParams l;
    l.self_attn = make_attention(store, n + ".self", channels, heads, rng);
    l.cross_attn = make_attention(store, n + ".cross", channels, heads, rng);
    l.ffn_in = make_linear(store, n + ".ffn_in", channels, 2 * channels, rng);
    l.ffn_out = make_linear(store, n + ".ffn_out", 2 * channels, channels, rng);
    l.norm_self = make_layer_norm(store, n + ".norm_self", channels);
    l.norm_cross = make_layer_norm(store, n + ".norm_cross", channels);
    l.norm_ffn = make_layer_norm(store, n + ".norm_ffn", channels);
    p.layers.push_back(std::move(l));
  }
  p.kernel_hidden = make_linear(store, "decoder.kernel_hidden", 2 * channels, channels, rng);
  p.kernel_out = make_linear(store, "decoder.kernel_out", channels, channels + 1, rng);
  p.reference = make_linear(store, "decoder.reference", 2 * channels, 2, rng);
  return p;
}

Tensor decode_queries(const Tensor& queries, const AudioFeatures& audio, const SegFeatures& seg,
                      const QueryDecoderParams& p) {
  if (queries.rank() != 2 || queries.dim(1) != seg.channels() || audio.channels() != seg.channels() ||
      audio.frames() != seg.frames()) {
    throw DimensionError("decode_queries: queries " + shape_str(queries.shape()) + ", audio " +
                         shape_str(audio.tokens.shape()) + " and seg " + shape_str(seg.maps.shape()) +
                         " are inconsistent");
  }
  const std::size_t n = queries.dim(0), c = queries.dim(1);
  const std::size_t tokens = seg.frames() * seg.h() * seg.w();
  Tensor memory = reshape(seg.maps, {1, tokens, c});
  // Audio constraint: the temporal mean of the audio is every query's positional term.
  Tensor pos = mean_pool(audio.tokens, 0);  // [C]
  Tensor x = reshape(queries, {1, n, c});
  for (const auto& layer : p.layers) {
    Tensor q = x + pos;
    x = layer.norm_self(x + multi_head_attention(q, q, x, layer.self_attn));
    x = layer.norm_cross(x + multi_head_attention(x + pos, memory, layer.cross_attn));
    x = layer.norm_ffn(x + layer.ffn_out(relu(layer.ffn_in(x))));
  }
  return reshape(x, {n, c});
}

namespace {

// [N, T, 2C]: decoded query i concatenated with audio frame t.
Tensor query_audio_pairs(const Tensor& decoded, const AudioFeatures& audio) {
  const std::size_t n = decoded.dim(0), t = audio.frames();
  return concat({repeat(decoded, 1, t), repeat(audio.tokens, 0, n)}, 2);
}

}  // namespace

DynamicMasks dynamic_masks(const Tensor& decoded, const AudioFeatures& audio, const SegFeatures& seg,
                           const QueryDecoderParams& p) {
  if (decoded.rank() != 2 || decoded.dim(1) != seg.channels() || audio.frames() != seg.frames()) {
    throw DimensionError("dynamic_masks: decoded " + shape_str(decoded.shape()) + " incompatible with seg " +
                         shape_str(seg.maps.shape()));
  }
  const std::size_t n = decoded.dim(0), t = seg.frames(), c = seg.channels();
  const std::size_t h = seg.h(), w = seg.w();
  DynamicMasks out;
  out.kernels = p.kernel_out(relu(p.kernel_hidden(query_audio_pairs(decoded, audio))));  // [N, T, C+1]
  Tensor weights = permute(slice(out.kernels, 2, 0, c), {1, 0, 2});                     // [T, N, C]
  Tensor bias = reshape(slice(out.kernels, 2, c, c + 1), {n, t});                        // [N, T]
  Tensor pixels = reshape(seg.maps, {t, h * w, c});
  Tensor dot = permute(bmm(weights, pixels, /*transpose_b=*/true), {1, 0, 2});          // [N, T, P]
  out.logits = reshape(dot + permute(repeat(bias, 0, h * w), {1, 2, 0}), {n, t, h, w});
  out.probs = sigmoid(out.logits);
  return out;
}

ReferenceScores reference_head(const Tensor& decoded, const AudioFeatures& audio, const QueryDecoderParams& p) {
  if (decoded.rank() != 2 || decoded.dim(1) != audio.channels()) {
    throw DimensionError("reference_head: decoded " + shape_str(decoded.shape()) + " incompatible with audio " +
                         shape_str(audio.tokens.shape()));
  }
  ReferenceScores r;
  r.logits = p.reference(query_audio_pairs(decoded, audio));
  r.probs = softmax(r.logits, -1);
  return r;
}

}  // namespace catr
