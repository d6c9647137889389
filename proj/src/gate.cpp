#include "catr/gate.hpp"

namespace catr {

GateParams make_gate(ParamStore& store, const std::string& name, std::size_t channels, std::size_t gate_channels,
                     Rng& rng) {
  if (gate_channels == 0 || channels % gate_channels != 0) {
    throw ConfigError("gate_channels " + std::to_string(gate_channels) + " must divide C=" +
                      std::to_string(channels));
  }
  GateParams p;
  p.gate_conv = make_linear(store, name + ".gate_conv", 2 * channels, 2 * gate_channels, rng);
  p.out_conv = make_linear(store, name + ".out_conv", channels, channels, rng);
  p.channels = channels;
  p.gate_channels = gate_channels;
  return p;
}

namespace {

// [G] -> [C], each gate value repeated over its channel group.
Tensor expand_gate(const Tensor& gate, std::size_t channels) {
  const std::size_t g = gate.dim(0);
  if (g == channels) return gate;
  return reshape(repeat(gate, 1, channels / g), {channels});
}

}  // namespace

GatePairResult gate_pair(const VideoFeatures& prev, const VideoFeatures& next, const GateParams& p) {
  if (prev.tokens.shape() != next.tokens.shape()) {
    throw DimensionError("gate_pair: block outputs " + shape_str(prev.tokens.shape()) + " and " +
                         shape_str(next.tokens.shape()) + " differ");
  }
  if (prev.channels() != p.channels) throw DimensionError("gate_pair: channel count does not match gate parameters");
  const std::size_t g = p.gate_channels;
  Tensor activ = sigmoid(p.gate_conv(concat({prev.tokens, next.tokens}, 2)));  // [T, P, 2G]
  Tensor pooled = mean_pool(mean_pool(activ, 0), 0);                          // [2G]
  GatePairResult r;
  r.gate_prev = slice(pooled, 0, 0, g);
  r.gate_next = slice(pooled, 0, g, 2 * g);
  Tensor mix = prev.tokens * expand_gate(r.gate_prev, p.channels) + next.tokens * expand_gate(r.gate_next, p.channels);
  r.fused = {p.out_conv(mix), prev.h, prev.w};
  return r;
}

VideoFeatures gate_fold(std::span<const VideoFeatures> blocks, std::span<const GateParams> gates) {
  if (blocks.empty()) throw ConfigError("gate_fold: no block outputs");
  if (gates.size() + 1 < blocks.size()) {
    throw ConfigError("gate_fold: " + std::to_string(blocks.size()) + " blocks need " +
                      std::to_string(blocks.size() - 1) + " gate units, have " + std::to_string(gates.size()));
  }
  VideoFeatures acc = blocks[0];
  for (std::size_t i = 1; i < blocks.size(); ++i) acc = gate_pair(acc, blocks[i], gates[i - 1]).fused;
  return acc;
}

}  // namespace catr
