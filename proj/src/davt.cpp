#include "catr/davt.hpp"

namespace catr {

namespace {

void check_pair(const VideoFeatures& v, const AudioFeatures& a, const char* op) {
  if (v.tokens.rank() != 3 || a.tokens.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected video [T,P,C] and audio [T,C]");
  }
  if (v.frames() != a.frames() || v.channels() != a.channels()) {
    throw DimensionError(std::string(op) + ": video " + shape_str(v.tokens.shape()) + " and audio " +
                         shape_str(a.tokens.shape()) + " disagree on T or C");
  }
  if (v.positions() != v.h * v.w) throw DimensionError(std::string(op) + ": P does not match the h*w grid");
}

}  // namespace

DavtBlockParams make_davt_block(ParamStore& store, const std::string& name, std::size_t channels,
                                std::size_t heads, Rng& rng) {
  DavtBlockParams p;
  p.spatial = make_attention(store, name + ".spatial", channels, heads, rng);
  p.temporal_av = make_attention(store, name + ".tav", channels, heads, rng);
  p.temporal_va = make_attention(store, name + ".tva", channels, heads, rng);
  p.norm_spatial = make_layer_norm(store, name + ".norm_spatial", channels);
  p.norm_av = make_layer_norm(store, name + ".norm_tav", channels);
  p.norm_va = make_layer_norm(store, name + ".norm_tva", channels);
  p.norm_merge = make_layer_norm(store, name + ".norm_merge", channels);
  p.heads = heads;
  return p;
}

std::pair<VideoFeatures, AudioFeatures> spatial_fusion(const VideoFeatures& v, const AudioFeatures& a,
                                                       const DavtBlockParams& p) {
  check_pair(v, a, "spatial_fusion");
  const std::size_t t = v.frames(), np = v.positions(), c = v.channels();
  // T sequences of P video tokens followed by the frame's audio token.
  Tensor seq = concat({v.tokens, reshape(a.tokens, {t, 1, c})}, 1);
  Tensor fused = p.norm_spatial(seq + multi_head_attention(seq, seq, p.spatial));
  VideoFeatures vout{slice(fused, 1, 0, np), v.h, v.w};
  AudioFeatures aout{reshape(slice(fused, 1, np, np + 1), {t, c})};
  return {vout, aout};
}

VideoFeatures temporal_av(const VideoFeatures& v, const AudioFeatures& a, const DavtBlockParams& p) {
  check_pair(v, a, "temporal_av");
  const std::size_t np = v.positions();
  // One length-T query sequence per spatial position, all attending over the audio frames.
  Tensor queries = permute(v.tokens, {1, 0, 2});           // [P, T, C]
  Tensor context = repeat(a.tokens, 0, np);                // [P, T, C]
  Tensor updated = p.norm_av(queries + multi_head_attention(queries, context, p.temporal_av));
  return {permute(updated, {1, 0, 2}), v.h, v.w};
}

std::pair<VideoFeatures, AudioFeatures> temporal_va(const VideoFeatures& v, const AudioFeatures& a,
                                                    const DavtBlockParams& p) {
  check_pair(v, a, "temporal_va");
  const std::size_t t = v.frames(), c = v.channels();
  Tensor pooled = reshape(mean_pool(v.tokens, 1), {1, t, c});  // [1, T, C]
  Tensor audio = reshape(a.tokens, {1, t, c});
  Tensor updated = reshape(p.norm_va(audio + multi_head_attention(audio, pooled, p.temporal_va)), {t, c});
  VideoFeatures broadcast{repeat(updated, 1, v.positions()), v.h, v.w};
  return {broadcast, AudioFeatures{updated}};
}

std::pair<VideoFeatures, AudioFeatures> davt_block(const VideoFeatures& v, const AudioFeatures& a,
                                                   const DavtBlockParams& p) {
  auto [vs, as] = spatial_fusion(v, a, p);
  VideoFeatures vhat = p.use_temporal_av ? temporal_av(vs, as, p) : vs;
  auto [vcheck, acheck] = temporal_va(vs, as, p);
  VideoFeatures merged{p.norm_merge(vhat.tokens + vcheck.tokens), v.h, v.w};
  return {merged, acheck};
}

EncoderOutput encode(const VideoFeatures& v, const AudioFeatures& a, std::span<const DavtBlockParams> blocks) {
  if (blocks.empty()) throw ConfigError("encode: at least one DAVT block is required");
  EncoderOutput out;
  VideoFeatures cur_v = v;
  AudioFeatures cur_a = a;
  for (const auto& block : blocks) {
    auto [nv, na] = davt_block(cur_v, cur_a, block);
    out.block_video.push_back(nv);
    cur_v = nv;
    cur_a = na;
  }
  out.audio = cur_a;
  return out;
}

}  // namespace catr
