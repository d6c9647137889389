#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "catr/tensor.hpp"

namespace catr {

using Rng = std::mt19937_64;

// Ordered collection of named trainable tensors. Registration order is the
// iteration order, which fixes checkpoint layout and optimizer updates.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  // Uniform(-limit, limit) entries.
  Tensor add_uniform(const std::string& name, Shape shape, double limit, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  const Tensor& get(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Linear and conv layers draw weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};
Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

struct Conv2d {
  Tensor weight;  // [k, k, Cin, Cout]
  Tensor bias;    // [Cout]
  std::size_t stride = 1;
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride); }
};
Conv2d make_conv(ParamStore& store, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                 std::size_t stride, Rng& rng);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};
LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t channels);

struct AttentionParams {
  Linear query, key, value, output;
  std::size_t heads = 1;
};
AttentionParams make_attention(ParamStore& store, const std::string& name, std::size_t channels,
                               std::size_t heads, Rng& rng);

// Multi-head scaled dot-product attention. query [B,Lq,C], context [B,Lk,C] -> [B,Lq,C].
// Scores are scaled by 1/sqrt(C/heads).
Tensor multi_head_attention(const Tensor& query, const Tensor& context, const AttentionParams& p);
// Variant with separate key and value sources (same [B,Lk,C] shape).
Tensor multi_head_attention(const Tensor& query, const Tensor& key_source, const Tensor& value_source,
                            const AttentionParams& p);

// Collects every attention probability tensor [B*heads, Lq, Lk] produced on
// this thread while in scope.
class AttentionTrace {
 public:
  AttentionTrace();
  ~AttentionTrace();
  AttentionTrace(const AttentionTrace&) = delete;
  AttentionTrace& operator=(const AttentionTrace&) = delete;

  const std::vector<Tensor>& probabilities() const { return probs_; }
  static void record(const Tensor& probs);

 private:
  std::vector<Tensor> probs_;
  AttentionTrace* previous_;
};

}  // namespace catr
