#include <random>

#include "catr/gradcheck.hpp"
#include "catr/loss.hpp"
#include "catr/model.hpp"

namespace catr {

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Uniform in [lo, hi] with a random sign; keeps inputs away from kinks and poles.
Tensor rand_away(Shape shape, Rng& rng, double lo, double hi, bool signed_values) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = mag(rng) * (signed_values && sign(rng) ? -1.0 : 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Reduces any tensor to a scalar through fixed random weights so that every
// output coordinate contributes a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> w(y.numel());
  for (double& x : w) x = dist(rng);
  return sum(y * Tensor::from(y.shape(), std::move(w)));
}

void jitter(ParamStore& store, Rng& rng, double scale = 0.1) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& [name, t] : store.entries()) {
    Tensor p = t;
    for (double& x : p.mutable_data()) x += dist(rng);
  }
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamStore& store) {
  for (const auto& [name, t] : store.entries()) inputs.push_back(t);
  return inputs;
}

constexpr std::size_t kC = 8;
constexpr std::size_t kHeads = 2;
constexpr std::size_t kT = 3;
constexpr std::size_t kGh = 2, kGw = 2;

VideoFeatures rand_video(Rng& rng) { return {randn({kT, kGh * kGw, kC}, rng), kGh, kGw}; }
AudioFeatures rand_audio(Rng& rng) { return {randn({kT, kC}, rng)}; }

using Case = GradcheckCase;

std::vector<Case> build_registry() {
  std::vector<Case> r;
  auto reg = [&r](std::string name, std::function<double(double)> fn) { r.push_back({std::move(name), std::move(fn)}); };

  // ---- tensor ops ----
  reg("matmul", [](double eps) {
    Rng rng(1);
    Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
    return gradcheck([&] { return probe(matmul(a, b)); }, {a, b}, eps);
  });
  reg("bmm", [](double eps) {
    Rng rng(2);
    Tensor a = randn({2, 3, 4}, rng), b = randn({2, 4, 5}, rng);
    return gradcheck([&] { return probe(bmm(a, b, false, 0.7)); }, {a, b}, eps);
  });
  reg("bmm_transpose_b", [](double eps) {
    Rng rng(3);
    Tensor a = randn({2, 3, 4}, rng), b = randn({2, 5, 4}, rng);
    return gradcheck([&] { return probe(bmm(a, b, true, 0.5)); }, {a, b}, eps);
  });
  reg("linear", [](double eps) {
    Rng rng(4);
    Tensor x = randn({2, 3, 4}, rng), w = randn({4, 5}, rng), b = randn({5}, rng);
    return gradcheck([&] { return probe(linear(x, w, b)); }, {x, w, b}, eps);
  });
  reg("add", [](double eps) {
    Rng rng(5);
    Tensor a = randn({2, 3, 4}, rng), b = randn({4}, rng);
    return gradcheck([&] { return probe(add(a, b) + add(b, a)); }, {a, b}, eps);
  });
  reg("sub", [](double eps) {
    Rng rng(6);
    Tensor a = randn({3, 4}, rng), b = randn({}, rng);
    return gradcheck([&] { return probe(sub(a, b) + sub(b, a) * 0.3); }, {a, b}, eps);
  });
  reg("mul", [](double eps) {
    Rng rng(7);
    Tensor a = randn({2, 3, 4}, rng), b = randn({3, 4}, rng);
    return gradcheck([&] { return probe(mul(a, b)); }, {a, b}, eps);
  });
  reg("scale", [](double eps) {
    Rng rng(8);
    Tensor x = randn({3, 4}, rng);
    return gradcheck([&] { return probe(scale(x, -1.7)); }, {x}, eps);
  });
  reg("add_scalar", [](double eps) {
    Rng rng(9);
    Tensor x = randn({3, 4}, rng);
    return gradcheck([&] { return probe(square(add_scalar(x, 0.4))); }, {x}, eps);
  });
  reg("neg", [](double eps) {
    Rng rng(10);
    Tensor x = randn({3, 4}, rng);
    return gradcheck([&] { return probe(neg(x)); }, {x}, eps);
  });
  reg("sigmoid", [](double eps) {
    Rng rng(11);
    Tensor x = randn({3, 4}, rng, 2.0);
    return gradcheck([&] { return probe(sigmoid(x)); }, {x}, eps);
  });
  reg("relu", [](double eps) {
    Rng rng(12);
    Tensor x = rand_away({3, 4}, rng, 0.1, 2.0, true);
    return gradcheck([&] { return probe(relu(x)); }, {x}, eps);
  });
  reg("exp", [](double eps) {
    Rng rng(13);
    Tensor x = randn({3, 4}, rng);
    return gradcheck([&] { return probe(exp(x)); }, {x}, eps);
  });
  reg("log", [](double eps) {
    Rng rng(14);
    Tensor x = rand_away({3, 4}, rng, 0.3, 3.0, false);
    return gradcheck([&] { return probe(log(x)); }, {x}, eps);
  });
  reg("log_sigmoid", [](double eps) {
    Rng rng(15);
    Tensor x = randn({3, 4}, rng, 3.0);
    return gradcheck([&] { return probe(log_sigmoid(x)); }, {x}, eps);
  });
  reg("square", [](double eps) {
    Rng rng(16);
    Tensor x = randn({3, 4}, rng);
    return gradcheck([&] { return probe(square(x)); }, {x}, eps);
  });
  reg("reciprocal", [](double eps) {
    Rng rng(17);
    Tensor x = rand_away({3, 4}, rng, 0.5, 2.0, true);
    return gradcheck([&] { return probe(reciprocal(x)); }, {x}, eps);
  });
  reg("softmax", [](double eps) {
    Rng rng(18);
    Tensor x = randn({2, 3, 4}, rng);
    return gradcheck([&] { return probe(softmax(x, 1)); }, {x}, eps);
  });
  reg("log_softmax", [](double eps) {
    Rng rng(19);
    Tensor x = randn({2, 3, 4}, rng);
    return gradcheck([&] { return probe(log_softmax(x, -1)); }, {x}, eps);
  });
  reg("layer_norm", [](double eps) {
    Rng rng(20);
    Tensor x = randn({2, 5, 3}, rng);
    return gradcheck([&] { return probe(layer_norm(x, 1)); }, {x}, eps);
  });
  reg("layer_norm_affine", [](double eps) {
    Rng rng(21);
    Tensor x = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
    return gradcheck([&] { return probe(layer_norm(x, g, b)); }, {x, g, b}, eps);
  });
  reg("mean_pool", [](double eps) {
    Rng rng(22);
    Tensor x = randn({2, 3, 4}, rng);
    return gradcheck([&] { return probe(mean_pool(x, 1)); }, {x}, eps);
  });
  reg("sum_axis", [](double eps) {
    Rng rng(23);
    Tensor x = randn({2, 3, 4}, rng);
    return gradcheck([&] { return probe(sum_axis(x, 0)); }, {x}, eps);
  });
  reg("sum", [](double eps) {
    Rng rng(24);
    Tensor x = randn({2, 3}, rng);
    return gradcheck([&] { return square(sum(x)); }, {x}, eps);
  });
  reg("mean", [](double eps) {
    Rng rng(25);
    Tensor x = randn({2, 3}, rng);
    return gradcheck([&] { return square(mean(x)); }, {x}, eps);
  });
  reg("reshape", [](double eps) {
    Rng rng(26);
    Tensor x = randn({2, 6}, rng);
    return gradcheck([&] { return probe(reshape(x, {3, 4})); }, {x}, eps);
  });
  reg("permute", [](double eps) {
    Rng rng(27);
    Tensor x = randn({2, 3, 4}, rng);
    return gradcheck([&] { return probe(permute(x, {2, 0, 1})); }, {x}, eps);
  });
  reg("concat", [](double eps) {
    Rng rng(28);
    Tensor a = randn({2, 3, 4}, rng), b = randn({2, 1, 4}, rng);
    return gradcheck([&] { return probe(concat({a, b, a}, 1)); }, {a, b}, eps);
  });
  reg("slice", [](double eps) {
    Rng rng(29);
    Tensor x = randn({2, 5, 3}, rng);
    return gradcheck([&] { return probe(slice(x, 1, 1, 4)); }, {x}, eps);
  });
  reg("repeat", [](double eps) {
    Rng rng(30);
    Tensor x = randn({2, 3}, rng);
    return gradcheck([&] { return probe(repeat(x, 1, 4)); }, {x}, eps);
  });
  reg("conv2d_1x1", [](double eps) {
    Rng rng(31);
    Tensor x = randn({2, 3, 4, 3}, rng), w = randn({1, 1, 3, 2}, rng), b = randn({2}, rng);
    return gradcheck([&] { return probe(conv2d_1x1(x, w, b)); }, {x, w, b}, eps);
  });
  reg("conv2d_3x3", [](double eps) {
    Rng rng(32);
    Tensor x = randn({2, 4, 5, 2}, rng), w = randn({3, 3, 2, 3}, rng), b = randn({3}, rng);
    return gradcheck([&] { return probe(conv2d_3x3(x, w, b)); }, {x, w, b}, eps);
  });
  reg("conv2d_3x3_stride2", [](double eps) {
    Rng rng(33);
    Tensor x = randn({1, 6, 4, 2}, rng), w = randn({3, 3, 2, 3}, rng), b = randn({3}, rng);
    return gradcheck([&] { return probe(conv2d_3x3(x, w, b, 2)); }, {x, w, b}, eps);
  });
  reg("avg_pool2d", [](double eps) {
    Rng rng(34);
    Tensor x = randn({2, 4, 6, 3}, rng);
    return gradcheck([&] { return probe(avg_pool2d(x, 2)); }, {x}, eps);
  });
  reg("upsample_bilinear", [](double eps) {
    Rng rng(35);
    Tensor x = randn({2, 3, 3}, rng);
    return gradcheck([&] { return probe(upsample_bilinear(x, 7, 5)); }, {x}, eps);
  });

  // ---- modules ----
  reg("multi_head_attention", [](double eps) {
    Rng rng(40);
    ParamStore store;
    const auto att = make_attention(store, "att", kC, kHeads, rng);
    jitter(store, rng);
    Tensor q = randn({2, 3, kC}, rng), ctx = randn({2, 4, kC}, rng);
    return gradcheck([&] { return probe(multi_head_attention(q, ctx, att)); }, with_params({q, ctx}, store), eps);
  });
  reg("extract_visual", [](double eps) {
    Rng rng(41);
    ParamStore store;
    const auto stub = make_feature_stub(store, kC, rng);
    jitter(store, rng);
    Tensor video = randn({2, 8, 8, 3}, rng);
    return gradcheck(
        [&] {
          const auto pyr = extract_visual(video, stub);
          return probe(pyr.levels[0], 1) + probe(pyr.levels[1], 2) + probe(pyr.levels[2], 3);
        },
        with_params({video}, store), eps);
  });
  reg("embed_audio", [](double eps) {
    Rng rng(42);
    ParamStore store;
    const auto stub = make_feature_stub(store, kC, rng);
    Tensor raw = randn({kT, kRawAudioDim}, rng);
    std::vector<Tensor> inputs = {raw, stub.audio.weight, stub.audio.bias};
    return gradcheck([&] { return probe(embed_audio(raw, stub).tokens); }, inputs, eps);
  });

  auto davt_case = [&reg](std::string name, int which) {
    reg(std::move(name), [which](double eps) {
      Rng rng(43 + which);
      ParamStore store;
      const auto block = make_davt_block(store, "b", kC, kHeads, rng);
      jitter(store, rng);
      VideoFeatures v = rand_video(rng);
      AudioFeatures a = rand_audio(rng);
      auto f = [&]() -> Tensor {
        switch (which) {
          case 0: {
            auto [vv, aa] = spatial_fusion(v, a, block);
            return probe(vv.tokens, 1) + probe(aa.tokens, 2);
          }
          case 1:
            return probe(temporal_av(v, a, block).tokens);
          case 2: {
            auto [vv, aa] = temporal_va(v, a, block);
            return probe(vv.tokens, 1) + probe(aa.tokens, 2);
          }
          default: {
            auto [vv, aa] = davt_block(v, a, block);
            return probe(vv.tokens, 1) + probe(aa.tokens, 2);
          }
        }
      };
      return gradcheck(f, with_params({v.tokens, a.tokens}, store), eps);
    });
  };
  davt_case("spatial_fusion", 0);
  davt_case("temporal_av", 1);
  davt_case("temporal_va", 2);
  davt_case("davt_block", 3);

  reg("gate_pair", [](double eps) {
    Rng rng(50);
    ParamStore store;
    const auto gate = make_gate(store, "g", kC, kC / 2, rng);
    jitter(store, rng);
    VideoFeatures a = rand_video(rng), b = rand_video(rng);
    return gradcheck(
        [&] {
          auto res = gate_pair(a, b, gate);
          return probe(res.fused.tokens) + probe(res.gate_prev, 5) + probe(res.gate_next, 6);
        },
        with_params({a.tokens, b.tokens}, store), eps);
  });
  reg("gate_fold_L2", [](double eps) {
    Rng rng(51);
    ParamStore store;
    std::vector<DavtBlockParams> blocks;
    for (int i = 0; i < 2; ++i) blocks.push_back(make_davt_block(store, "b" + std::to_string(i), kC, kHeads, rng));
    std::vector<GateParams> gates = {make_gate(store, "g", kC, kC, rng)};
    jitter(store, rng);
    VideoFeatures v = rand_video(rng);
    AudioFeatures a = rand_audio(rng);
    return gradcheck(
        [&] {
          auto enc = encode(v, a, blocks);
          return probe(gate_fold(enc.block_video, gates).tokens);
        },
        with_params({v.tokens, a.tokens}, store), eps);
  });
  reg("gate_fold_L3", [](double eps) {
    Rng rng(52);
    ParamStore store;
    std::vector<GateParams> gates = {make_gate(store, "g0", kC, kC, rng), make_gate(store, "g1", kC, 2, rng)};
    jitter(store, rng);
    std::vector<VideoFeatures> vs = {rand_video(rng), rand_video(rng), rand_video(rng)};
    return gradcheck([&] { return probe(gate_fold(vs, gates).tokens); },
                     with_params({vs[0].tokens, vs[1].tokens, vs[2].tokens}, store), eps);
  });

  // Decoder pieces share one small setup.
  struct DecoderSetup {
    ParamStore store;
    FeatureStubParams stub;
    FpnParams fpn;
    QueryDecoderParams dec;
    Tensor video;
    AudioFeatures audio;
  };
  auto decoder_setup = [](std::uint64_t seed, std::vector<std::size_t> levels) {
    auto s = std::make_unique<DecoderSetup>();
    Rng rng(seed);
    s->stub = make_feature_stub(s->store, kC, rng);
    s->fpn = make_fpn(s->store, kC, levels, rng);
    s->dec = make_query_decoder(s->store, kC, kHeads, 3, 2, rng);
    jitter(s->store, rng);
    s->video = randn({2, 16, 8, 3}, rng);
    s->audio = {randn({2, kC}, rng)};
    return s;
  };
  reg("build_seg_features", [decoder_setup](double eps) {
    auto s = decoder_setup(60, {2, 4, 8});
    return gradcheck(
        [&] {
          const auto pyr = extract_visual(s->video, s->stub);
          return probe(build_seg_features(pyr.deepest(), pyr, s->fpn).maps);
        },
        with_params({s->video}, s->store), eps);
  });
  reg("decode_queries", [decoder_setup](double eps) {
    auto s = decoder_setup(61, {8});
    Rng rng(7);
    Tensor seg = randn({2, 2, 1, kC}, rng);
    return gradcheck([&] { return probe(decode_queries(s->dec.query_embed, s->audio, {seg}, s->dec)); },
                     with_params({seg, s->audio.tokens}, s->store), eps);
  });
  reg("dynamic_masks", [decoder_setup](double eps) {
    auto s = decoder_setup(62, {8});
    Rng rng(8);
    Tensor seg = randn({2, 2, 3, kC}, rng), decoded = randn({3, kC}, rng);
    return gradcheck(
        [&] {
          auto m = dynamic_masks(decoded, s->audio, {seg}, s->dec);
          return probe(m.logits) + probe(m.probs, 4);
        },
        with_params({seg, decoded, s->audio.tokens}, s->store), eps);
  });
  reg("reference_head", [decoder_setup](double eps) {
    auto s = decoder_setup(63, {8});
    Rng rng(9);
    Tensor decoded = randn({3, kC}, rng);
    return gradcheck([&] { return probe(reference_head(decoded, s->audio, s->dec).probs); },
                     with_params({decoded, s->audio.tokens}, s->store), eps);
  });
  reg("decoder_stack", [decoder_setup](double eps) {
    auto s = decoder_setup(64, {4, 8});
    return gradcheck(
        [&] {
          const auto pyr = extract_visual(s->video, s->stub);
          const auto seg = build_seg_features(pyr.deepest(), pyr, s->fpn);
          Tensor decoded = decode_queries(s->dec.query_embed, s->audio, seg, s->dec);
          return probe(dynamic_masks(decoded, s->audio, seg, s->dec).logits, 1) +
                 probe(reference_head(decoded, s->audio, s->dec).logits, 2);
        },
        with_params({s->video, s->audio.tokens}, s->store), eps);
  });

  // ---- losses ----
  reg("dice_coeff", [](double eps) {
    Rng rng(70);
    Tensor logits = randn({2, 3, 3}, rng);
    Tensor gt = Tensor::from({2, 3, 3}, {1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1, 1});
    return gradcheck([&] { return dice_coeff(sigmoid(logits), gt); }, {logits}, eps);
  });
  reg("sigmoid_focal_loss", [](double eps) {
    Rng rng(71);
    Tensor logits = randn({2, 3, 3}, rng, 2.0);
    Tensor gt = Tensor::from({2, 3, 3}, {1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1, 1});
    return gradcheck([&] { return sigmoid_focal_loss(logits, gt); }, {logits}, eps);
  });
  reg("set_loss", [](double eps) {
    Rng rng(72);
    Tensor masks = randn({3, 2, 4, 4}, rng), refs = randn({3, 2, 2}, rng);
    GroundTruth gt;
    gt.masks = Tensor::zeros({2, 4, 4});
    auto m = gt.masks.mutable_data();
    for (std::size_t i : {1, 2, 5, 6, 9}) m[i] = 1.0;
    gt.visibility = {1, 0};
    const auto pos = match(sigmoid(masks), softmax(refs, -1), gt).pos_index;
    return gradcheck([&] { return set_loss(masks, refs, gt, pos, LossWeights{}).total; }, {masks, refs}, eps);
  });

  // ---- end to end ----
  reg("catr_model_loss", [](double eps) {
    ModelConfig cfg;
    cfg.channels = kC;
    cfg.heads = kHeads;
    cfg.blocks = 2;
    cfg.num_queries = 3;
    cfg.decoder_layers = 1;
    cfg.gate_channels = kC;
    cfg.frames = 2;
    CatrModel model(cfg, 80);
    Rng rng(81);
    jitter(model.params(), rng);
    Tensor video = randn({2, 16, 16, 3}, rng), audio = randn({2, kRawAudioDim}, rng);
    GroundTruth gt;
    gt.masks = Tensor::zeros({2, 16, 16});
    auto m = gt.masks.mutable_data();
    for (std::size_t y = 4; y < 10; ++y) {
      for (std::size_t x = 3; x < 8; ++x) m[y * 16 + x] = 1.0;
    }
    gt.visibility = {1, 0};
    auto loss = [&](std::size_t pos) {
      const auto out = model.forward(video, audio);
      Tensor up = reshape(upsample_bilinear(reshape(out.masks.logits, {3 * 2, 2, 2}), 16, 16), {3, 2, 16, 16});
      return set_loss(up, out.refs.logits, gt, pos, LossWeights{}).total;
    };
    std::size_t pos = 0;
    {
      NoGradGuard guard;
      const auto out = model.forward(video, audio);
      Tensor up = reshape(upsample_bilinear(reshape(out.masks.logits, {3 * 2, 2, 2}), 16, 16), {3, 2, 16, 16});
      pos = match(sigmoid(up), out.refs.probs, gt).pos_index;
    }
    return gradcheck([&] { return loss(pos); }, with_params({video}, model.params()), eps);
  });
  return r;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_registry() {
  static const std::vector<GradcheckCase> registry = build_registry();
  return registry;
}

}  // namespace catr
