#include "catr/nn.hpp"

#include <cmath>

namespace catr {

namespace {
thread_local AttentionTrace* g_trace = nullptr;
}

Tensor ParamStore::add(const std::string& name, Tensor value) {
  for (const auto& [n, t] : entries_) {
    if (n == name) throw ConfigError("duplicate parameter name: " + name);
  }
  value.set_requires_grad(true);
  entries_.emplace_back(name, value);
  return value;
}

Tensor ParamStore::add_uniform(const std::string& name, Shape shape, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter: " + name);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  const double limit = 1.0 / std::sqrt(double(in));
  l.weight = store.add_uniform(name + ".weight", {in, out}, limit, rng);
  l.bias = store.add_uniform(name + ".bias", {out}, limit, rng);
  return l;
}

Conv2d make_conv(ParamStore& store, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                 std::size_t stride, Rng& rng) {
  Conv2d c;
  const double limit = 1.0 / std::sqrt(double(k * k * cin));
  c.weight = store.add_uniform(name + ".weight", {k, k, cin, cout}, limit, rng);
  c.bias = store.add_uniform(name + ".bias", {cout}, limit, rng);
  c.stride = stride;
  return c;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t channels) {
  return {store.add_constant(name + ".gamma", {channels}, 1.0), store.add_constant(name + ".beta", {channels}, 0.0)};
}

AttentionParams make_attention(ParamStore& store, const std::string& name, std::size_t channels,
                               std::size_t heads, Rng& rng) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("attention " + name + ": channels " + std::to_string(channels) +
                      " not divisible by heads " + std::to_string(heads));
  }
  AttentionParams p;
  p.query = make_linear(store, name + ".q", channels, channels, rng);
  p.key = make_linear(store, name + ".k", channels, channels, rng);
  p.value = make_linear(store, name + ".v", channels, channels, rng);
  p.output = make_linear(store, name + ".o", channels, channels, rng);
  p.heads = heads;
  return p;
}

namespace {

// [B,L,C] -> [B*H, L, C/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), c = x.dim(2);
  const std::size_t d = c / heads;
  return reshape(permute(reshape(x, {b, l, heads, d}), {0, 2, 1, 3}), {b * heads, l, d});
}

// [B*H, L, d] -> [B, L, H*d]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t l = x.dim(1), d = x.dim(2);
  return reshape(permute(reshape(x, {batch, heads, l, d}), {0, 2, 1, 3}), {batch, l, heads * d});
}

}  // namespace

Tensor multi_head_attention(const Tensor& query, const Tensor& key_source, const Tensor& value_source,
                            const AttentionParams& p) {
  if (query.rank() != 3 || key_source.rank() != 3 || key_source.shape() != value_source.shape() ||
      query.dim(0) != key_source.dim(0) || query.dim(2) != key_source.dim(2)) {
    throw DimensionError("attention: query " + shape_str(query.shape()) + " incompatible with context " +
                         shape_str(key_source.shape()));
  }
  const std::size_t batch = query.dim(0);
  const std::size_t c = query.dim(2);
  const std::size_t d_head = c / p.heads;
  Tensor q = split_heads(p.query(query), p.heads);
  Tensor k = split_heads(p.key(key_source), p.heads);
  Tensor v = split_heads(p.value(value_source), p.heads);
  Tensor scores = bmm(q, k, /*transpose_b=*/true, 1.0 / std::sqrt(static_cast<double>(d_head)));
  audit_score_buffer(scores);
  Tensor probs = softmax(scores, -1);
  scores = Tensor();
  if (g_trace) AttentionTrace::record(probs);
  Tensor mixed = merge_heads(bmm(probs, v), batch, p.heads);
  return p.output(mixed);
}

Tensor multi_head_attention(const Tensor& query, const Tensor& context, const AttentionParams& p) {
  return multi_head_attention(query, context, context, p);
}

AttentionTrace::AttentionTrace() : previous_(g_trace) { g_trace = this; }
AttentionTrace::~AttentionTrace() { g_trace = previous_; }
void AttentionTrace::record(const Tensor& probs) {
  if (g_trace) g_trace->probs_.push_back(probs);
}

}  // namespace catr
