#include "catr/model.hpp"

#include <algorithm>

namespace catr {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(channels, "channels");
  positive(blocks, "blocks");
  positive(heads, "heads");
  positive(num_queries, "num_queries");
  positive(gate_channels, "gate_channels");
  positive(frames, "frames");
  if (channels % heads != 0) throw ConfigError("model.channels must be divisible by model.heads");
  if (channels % 4 != 0) throw ConfigError("model.channels must be divisible by 4");
  if (channels % gate_channels != 0) throw ConfigError("model.gate_channels must divide model.channels");
  for (std::size_t s : fpn_levels) {
    if (std::find(kPyramidStrides.begin(), kPyramidStrides.end(), s) == kPyramidStrides.end()) {
      throw ConfigError("model.fpn_levels entries must be 2, 4 or 8");
    }
  }
}

CatrModel::CatrModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t c = config_.channels;
  stub_ = make_feature_stub(store_, c, rng);
  temporal_pos_ = store_.add_constant("temporal_pos", {config_.frames, c}, 0.0);
  for (std::size_t i = 0; i < config_.blocks; ++i) {
    auto block = make_davt_block(store_, "davt" + std::to_string(i), c, config_.heads, rng);
    block.use_temporal_av = config_.use_temporal_av;
    blocks_.push_back(std::move(block));
  }
  if (config_.use_gate) {
    for (std::size_t i = 0; i + 1 < config_.blocks; ++i) {
      gates_.push_back(make_gate(store_, "gate" + std::to_string(i), c, config_.gate_channels, rng));
    }
  }
  fpn_ = make_fpn(store_, c, config_.fpn_levels, rng);
  decoder_ = make_query_decoder(store_, c, config_.heads, config_.num_queries, config_.decoder_layers, rng);
}

ModelOutput CatrModel::forward(const Tensor& video, const Tensor& audio) const {
  if (video.rank() != 4 || video.dim(0) != config_.frames) {
    throw DimensionError("model: expected video [" + std::to_string(config_.frames) + ",H,W,3], got " +
                         shape_str(video.shape()));
  }
  const VisualPyramid pyramid = extract_visual(video, stub_);
  VideoFeatures v = pyramid.deepest();
  AudioFeatures a = embed_audio(audio, stub_);
  v.tokens = v.tokens + repeat(temporal_pos_, 1, v.positions());
  a.tokens = a.tokens + temporal_pos_;

  EncoderOutput enc = encode(v, a, blocks_);
  const VideoFeatures fused = config_.use_gate ? gate_fold(enc.block_video, gates_) : enc.block_video.back();

  ModelOutput out;
  out.seg = build_seg_features(fused, pyramid, fpn_);
  out.decoded = decode_queries(decoder_.query_embed, enc.audio, out.seg, decoder_);
  out.masks = dynamic_masks(out.decoded, enc.audio, out.seg, decoder_);
  out.refs = reference_head(out.decoded, enc.audio, decoder_);
  return out;
}

}  // namespace catr
