#include <doctest.h>

#include "catr/model.hpp"
#include "helpers.hpp"

using namespace catr;
using testutil::randn;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.channels = 8;
  c.gate_channels = 4;
  c.heads = 2;
  c.num_queries = 3;
  c.decoder_layers = 1;
  c.frames = 2;
  return c;
}

}  // namespace

TEST_CASE("model forward shapes") {
  Rng rng(1);
  const CatrModel m(small(), 0);
  const ModelOutput out = m.forward(randn({2, 16, 24, 3}, rng), randn({2, 128}, rng));
  CHECK(out.seg.maps.shape() == Shape{2, 2, 3, 8});
  CHECK(out.decoded.shape() == Shape{3, 8});
  CHECK(out.masks.logits.shape() == Shape{3, 2, 2, 3});
  CHECK(out.refs.probs.shape() == Shape{3, 2, 2});
  for (double p : out.masks.probs.to_vector()) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("model construction is a pure function of config and seed") {
  const CatrModel a(small(), 5), b(small(), 5), c(small(), 6);
  const auto& pa = a.params().entries();
  const auto& pb = b.params().entries();
  const auto& pc = c.params().entries();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(testutil::bit_equal(pa[i].second.data(), pb[i].second.data()));
    any_diff = any_diff || !testutil::bit_equal(pa[i].second.data(), pc[i].second.data());
  }
  CHECK(any_diff);
}

TEST_CASE("ablation switches") {
  ModelConfig no_gate = small();
  no_gate.use_gate = false;
  CHECK(CatrModel(no_gate, 0).params().size() < CatrModel(small(), 0).params().size());

  // Without temporal A-to-V, the video branch ignores the temporal audio attention weights.
  ModelConfig no_tav = small();
  no_tav.use_temporal_av = false;
  Rng rng(2);
  const Tensor video = randn({2, 16, 16, 3}, rng), audio = randn({2, 128}, rng);
  CatrModel m(no_tav, 0);
  const Tensor before = m.forward(video, audio).masks.logits;
  for (auto& [name, t] : m.params().entries()) {
    if (name.find(".tav.") != std::string::npos) {
      Tensor p = t;
      for (double& x : p.mutable_data()) x += 1.0;
    }
  }
  CHECK(testutil::bit_equal(before.data(), m.forward(video, audio).masks.logits.data()));
}

TEST_CASE("model config validation") {
  ModelConfig c = small();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small();
  c.blocks = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small();
  c.gate_channels = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small();
  c.fpn_levels = {3};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(small().validate());
}

TEST_CASE("model rejects inputs of the wrong shape") {
  Rng rng(3);
  const CatrModel m(small(), 0);
  CHECK_THROWS(m.forward(randn({3, 16, 16, 3}, rng), randn({3, 128}, rng)));
  CHECK_THROWS(m.forward(randn({2, 12, 16, 3}, rng), randn({2, 128}, rng)));
  CHECK_THROWS(m.forward(randn({2, 16, 16, 3}, rng), randn({2, 64}, rng)));
}
