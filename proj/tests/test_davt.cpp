#include <doctest.h>

#include <numeric>

#include "catr/davt.hpp"
#include "catr/gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace catr;
using testutil::randn;

namespace {

void jitter(ParamStore& store, Rng& rng) {
  std::normal_distribution<double> d(0.0, 0.2);
  for (const auto& [name, t] : store.entries()) {
    Tensor p = t;
    for (double& x : p.mutable_data()) x += d(rng);
  }
}

struct Fixture {
  ParamStore store;
  DavtBlockParams block;
  VideoFeatures v;
  AudioFeatures a;
  Fixture(std::size_t T, std::size_t h, std::size_t w, std::size_t C, std::size_t heads, std::uint64_t seed) {
    Rng rng(seed);
    block = make_davt_block(store, "b", C, heads, rng);
    jitter(store, rng);
    v = {randn({T, h * w, C}, rng), h, w};
    a = {randn({T, C}, rng)};
  }
};

}  // namespace

TEST_CASE("spatial_fusion shapes and stochastic attention rows") {
  Fixture f(5, 4, 4, 8, 2, 1);
  AttentionTrace trace;
  auto [vs, as] = spatial_fusion(f.v, f.a, f.block);
  CHECK(vs.tokens.shape() == Shape{5, 16, 8});
  CHECK(as.tokens.shape() == Shape{5, 8});
  REQUIRE(trace.probabilities().size() == 1);
  const Tensor& probs = trace.probabilities()[0];
  CHECK(probs.shape() == Shape{5 * 2, 17, 17});
  for (double s : sum_axis(probs, -1).to_vector()) CHECK(std::abs(s - 1.0) < 1e-6);
}

TEST_CASE("spatial_fusion single-token case is a 2x2 attention") {
  Fixture f(1, 1, 1, 4, 1, 2);
  AttentionTrace trace;
  spatial_fusion(f.v, f.a, f.block);
  const Tensor& probs = trace.probabilities()[0];
  CHECK(probs.shape() == Shape{1, 2, 2});
  for (double s : sum_axis(probs, -1).to_vector()) CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("spatial_fusion matches the loop oracle") {
  Fixture f(2, 2, 2, 6, 2, 3);
  auto [vs, as] = spatial_fusion(f.v, f.a, f.block);
  for (std::size_t t = 0; t < 2; ++t) {
    oracle::Mat seq = oracle::rows_of(f.v.tokens, t * 4, 4);
    seq.push_back(oracle::rows_of(f.a.tokens, t, 1)[0]);
    const auto out = oracle::layer_norm(oracle::add(seq, oracle::attention(seq, seq, seq, f.block.spatial)),
                                        f.block.norm_spatial);
    const oracle::Mat video(out.begin(), out.begin() + 4);
    CHECK(oracle::max_diff(video, vs.tokens, t * 4) < 1e-9);
    CHECK(oracle::max_diff({out[4]}, as.tokens, t) < 1e-9);
  }
}

TEST_CASE("spatial_fusion is equivariant to spatial permutations") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Fixture f(3, 2, 3, 8, 2, 10 + trial);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(f.v.tokens.numel());
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t p = 0; p < 6; ++p) {
        for (std::size_t c = 0; c < 8; ++c) permuted[(t * 6 + p) * 8 + c] = f.v.tokens.data()[(t * 6 + perm[p]) * 8 + c];
      }
    }
    const VideoFeatures pv{Tensor::from({3, 6, 8}, permuted), 2, 3};
    auto [v1, a1] = spatial_fusion(f.v, f.a, f.block);
    auto [v2, a2] = spatial_fusion(pv, f.a, f.block);
    double worst = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t p = 0; p < 6; ++p) {
        for (std::size_t c = 0; c < 8; ++c) {
          worst = std::max(worst, std::abs(v2.tokens.data()[(t * 6 + p) * 8 + c] -
                                           v1.tokens.data()[(t * 6 + perm[p]) * 8 + c]));
        }
      }
    }
    CHECK(worst < 1e-12);
    CHECK(testutil::max_abs_diff(a1.tokens.data(), a2.tokens.data()) < 1e-12);
  }
}

TEST_CASE("temporal_av matches a per-position loop oracle") {
  Fixture f(3, 2, 2, 8, 2, 5);
  const VideoFeatures out = temporal_av(f.v, f.a, f.block);
  CHECK(out.tokens.shape() == Shape{3, 4, 8});
  const oracle::Mat audio = oracle::rows_of(f.a.tokens, 0, 3);
  for (std::size_t p = 0; p < 4; ++p) {
    const oracle::Mat q = oracle::rows_of(f.v.tokens, p, 3, 4);
    const auto expect =
        oracle::layer_norm(oracle::add(q, oracle::attention(q, audio, audio, f.block.temporal_av)), f.block.norm_av);
    CHECK(oracle::max_diff(expect, out.tokens, p, 4) < 1e-6);
  }
}

TEST_CASE("temporal_av with one frame sees a single key") {
  Fixture f(1, 2, 2, 4, 1, 6);
  AttentionTrace trace;
  const VideoFeatures out = temporal_av(f.v, f.a, f.block);
  for (double p : trace.probabilities()[0].data()) CHECK(p == 1.0);
  const oracle::Mat a = oracle::rows_of(f.a.tokens, 0, 1);
  const oracle::Mat projected = oracle::affine(oracle::affine(a, f.block.temporal_av.value), f.block.temporal_av.output);
  for (std::size_t p = 0; p < 4; ++p) {
    const oracle::Mat q = oracle::rows_of(f.v.tokens, p, 1);
    CHECK(oracle::max_diff(oracle::layer_norm(oracle::add(q, projected), f.block.norm_av), out.tokens, p) < 1e-9);
  }
}

TEST_CASE("temporal_av with constant audio gives frame-independent attention output") {
  Fixture f(4, 1, 2, 8, 2, 7);
  std::vector<double> row(f.a.tokens.data().begin(), f.a.tokens.data().begin() + 8);
  std::vector<double> constant;
  for (int t = 0; t < 4; ++t) constant.insert(constant.end(), row.begin(), row.end());
  const Tensor audio = Tensor::from({4, 8}, constant);
  const Tensor context = repeat(audio, 0, 2);
  const Tensor q = permute(f.v.tokens, {1, 0, 2});
  const Tensor att = multi_head_attention(q, context, f.block.temporal_av);  // [P, T, C]
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t t = 1; t < 4; ++t) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(att.at({p, t, c}) == doctest::Approx(att.at({p, 0, c})).epsilon(1e-12));
    }
  }
}

TEST_CASE("temporal_av is local in the spatial position") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Fixture f(3, 2, 3, 8, 2, 20 + trial);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    std::vector<double> edited(f.v.tokens.data().begin(), f.v.tokens.data().end());
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t c = 0; c < 8; ++c) edited[(t * 6 + p) * 8 + c] += 0.5 + double(c);
    }
    const VideoFeatures ev{Tensor::from({3, 6, 8}, edited), 2, 3};
    const Tensor y1 = temporal_av(f.v, f.a, f.block).tokens;
    const Tensor y2 = temporal_av(ev, f.a, f.block).tokens;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t q = 0; q < 6; ++q) {
        bool same = true;
        for (std::size_t c = 0; c < 8; ++c) same = same && y1.at({t, q, c}) == y2.at({t, q, c});
        if (q == p) CHECK_FALSE(same);
        else CHECK(same);
      }
    }
  }
}

TEST_CASE("temporal_va matches the pooled loop oracle and broadcasts") {
  Fixture f(3, 2, 2, 8, 2, 9);
  auto [vb, au] = temporal_va(f.v, f.a, f.block);
  oracle::Mat pooled(3, std::vector<double>(8, 0.0));
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t p = 0; p < 4; ++p) {
      for (std::size_t c = 0; c < 8; ++c) pooled[t][c] += f.v.tokens.at({t, p, c}) / 4.0;
    }
  }
  const oracle::Mat audio = oracle::rows_of(f.a.tokens, 0, 3);
  const auto expect = oracle::layer_norm(oracle::add(audio, oracle::attention(audio, pooled, pooled, f.block.temporal_va)),
                                         f.block.norm_va);
  CHECK(oracle::max_diff(expect, au.tokens, 0) < 1e-6);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t p = 1; p < 4; ++p) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(vb.tokens.at({t, p, c}) == vb.tokens.at({t, 0, c}));
    }
  }
}

TEST_CASE("temporal_va with one frame sees a single key") {
  Fixture f(1, 2, 1, 4, 2, 10);
  AttentionTrace trace;
  temporal_va(f.v, f.a, f.block);
  for (double p : trace.probabilities()[0].data()) CHECK(p == 1.0);
}

TEST_CASE("davt_block with zero value projections depends only on the residual paths") {
  Fixture f(2, 2, 2, 8, 2, 11);
  for (AttentionParams* att : {&f.block.spatial, &f.block.temporal_av, &f.block.temporal_va}) {
    for (Tensor t : {att->value.weight, att->value.bias, att->output.bias}) {
      for (double& x : t.mutable_data()) x = 0.0;
    }
  }
  auto [v1, a1] = davt_block(f.v, f.a, f.block);
  // Spatial fusion reduces to LN(x); the temporal steps to LN of their queries.
  const Tensor vs = f.block.norm_spatial(concat({f.v.tokens, reshape(f.a.tokens, {2, 1, 8})}, 1));
  const Tensor vhat = f.block.norm_av(slice(vs, 1, 0, 4));
  const Tensor ahat = f.block.norm_va(reshape(slice(vs, 1, 4, 5), {2, 8}));
  const Tensor merged = f.block.norm_merge(vhat + repeat(ahat, 1, 4));
  CHECK(testutil::max_abs_diff(v1.tokens.data(), merged.data()) < 1e-12);
  CHECK(testutil::max_abs_diff(a1.tokens.data(), ahat.data()) < 1e-12);
}

TEST_CASE("davt_block attention rows are stochastic and shapes preserved") {
  Fixture f(3, 3, 2, 8, 4, 12);
  AttentionTrace trace;
  auto [v1, a1] = davt_block(f.v, f.a, f.block);
  CHECK(v1.tokens.shape() == f.v.tokens.shape());
  CHECK(a1.tokens.shape() == f.a.tokens.shape());
  CHECK(trace.probabilities().size() == 3);
  for (const auto& probs : trace.probabilities()) {
    for (double s : sum_axis(probs, -1).to_vector()) CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("davt_block gradcheck at T=2, P=4, C=6") {
  Fixture f(2, 2, 2, 6, 2, 13);
  Tensor v = f.v.tokens, a = f.a.tokens;
  v.set_requires_grad(true);
  a.set_requires_grad(true);
  Rng rng(14);
  const Tensor wv = randn({2, 4, 6}, rng), wa = randn({2, 6}, rng);
  std::vector<Tensor> inputs = {v, a};
  for (const auto& [name, t] : f.store.entries()) inputs.push_back(t);
  const double err = gradcheck(
      [&] {
        auto [vo, ao] = davt_block({v, 2, 2}, {a}, f.block);
        return sum(vo.tokens * wv) + sum(ao.tokens * wa);
      },
      inputs);
  CHECK(err < 1e-4);
}

TEST_CASE("encode composes blocks") {
  Rng rng(15);
  ParamStore store;
  std::vector<DavtBlockParams> blocks = {make_davt_block(store, "b0", 8, 2, rng),
                                         make_davt_block(store, "b1", 8, 2, rng)};
  const VideoFeatures v{randn({2, 4, 8}, rng), 2, 2};
  const AudioFeatures a{randn({2, 8}, rng)};
  CHECK_THROWS_AS(encode(v, a, std::span<const DavtBlockParams>()), ConfigError);

  const auto one = encode(v, a, std::span(blocks.data(), 1));
  auto [v1, a1] = davt_block(v, a, blocks[0]);
  REQUIRE(one.block_video.size() == 1);
  CHECK(testutil::bit_equal(one.block_video[0].tokens.data(), v1.tokens.data()));

  const auto two = encode(v, a, blocks);
  auto [v2, a2] = davt_block(v1, a1, blocks[1]);
  REQUIRE(two.block_video.size() == 2);
  CHECK(testutil::bit_equal(two.block_video[0].tokens.data(), v1.tokens.data()));
  CHECK(testutil::bit_equal(two.block_video[1].tokens.data(), v2.tokens.data()));
  CHECK(testutil::bit_equal(two.audio.tokens.data(), a2.tokens.data()));
}

TEST_CASE("davt rejects mismatched frames") {
  Fixture f(3, 2, 2, 8, 2, 16);
  const AudioFeatures short_audio{Tensor::zeros({2, 8})};
  CHECK_THROWS_AS(spatial_fusion(f.v, short_audio, f.block), DimensionError);
  CHECK_THROWS_AS(temporal_av(f.v, short_audio, f.block), DimensionError);
  CHECK_THROWS_AS(temporal_va(f.v, short_audio, f.block), DimensionError);
}
