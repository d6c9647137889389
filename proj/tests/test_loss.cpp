#include <doctest.h>

#include "brute_oracles.hpp"
#include "catr/gradcheck.hpp"
#include "catr/loss.hpp"
#include "helpers.hpp"

using namespace catr;
using testutil::randn;

TEST_CASE("dice examples") {
  CHECK(dice_coeff(std::vector<double>{1, 0, 0, 0}, std::vector<double>{1, 1, 0, 0}, 0.0) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(dice_coeff(std::vector<double>(9, 1.0), std::vector<double>(9, 1.0)) == 1.0);
  CHECK(dice_coeff(std::vector<double>(9, 0.0), std::vector<double>(9, 0.0)) == 1.0);
  CHECK_THROWS_AS(dice_coeff(std::vector<double>(3, 0.0), std::vector<double>(4, 0.0)), DimensionError);
}

TEST_CASE("dice tensor and span forms agree with the pixel-count oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = brute::random_probs({2, 3, 4}, rng), g = brute::random_binary({2, 3, 4}, rng, 0.5);
    const double expect = brute::dice(p.to_vector(), g.to_vector(), 1.0);
    CHECK(std::abs(dice_coeff(p.data(), g.data()) - expect) < 1e-12);
    CHECK(std::abs(dice_coeff(p, g).item() - expect) < 1e-12);
  }
}

TEST_CASE("focal loss single-pixel closed form") {
  const double expect = -0.25 * 0.4 * 0.4 * std::log(0.6);
  CHECK(expect == doctest::Approx(0.02043).epsilon(1e-3));
  CHECK(focal_term(0.6, 1.0) == doctest::Approx(expect).epsilon(1e-12));
  const double logit = std::log(0.6 / 0.4);
  CHECK(sigmoid_focal_loss(Tensor::from({1}, {logit}), Tensor::from({1}, {1.0})).item() ==
        doctest::Approx(expect).epsilon(1e-12));
  // Negative pixel: -(1 - alpha) p^gamma log(1 - p).
  CHECK(focal_term(0.6, 0.0) == doctest::Approx(-0.75 * 0.36 * std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("focal loss is finite for extreme logits") {
  const Tensor l = Tensor::from({4}, {-800.0, 800.0, -800.0, 800.0});
  const Tensor g = Tensor::from({4}, {0.0, 1.0, 1.0, 0.0});
  const double v = sigmoid_focal_loss(l, g).item();
  CHECK(std::isfinite(v));
  CHECK(v > 100.0);
}

TEST_CASE("match examples") {
  GroundTruth gt{Tensor::from({1, 1, 2}, {1, 0}), {1}};
  const Tensor single = Tensor::from({1, 1, 1, 2}, {0.2, 0.9});
  CHECK(match(single, Tensor::from({1, 1, 2}, {0.5, 0.5}), gt).pos_index == 0);

  const Tensor masks = Tensor::from({2, 1, 1, 2}, {1, 0, 0, 1});
  const Tensor refs = Tensor::from({2, 1, 2}, {0.3, 0.7, 0.3, 0.7});
  const MatchResult r = match(masks, refs, gt);
  CHECK(r.pos_index == 0);
  CHECK(r.costs[0] < r.costs[1]);

  // Duplicate of the best query at a higher index.
  const Tensor dup = Tensor::from({3, 1, 1, 2}, {0, 1, 1, 0, 1, 0});
  const Tensor dup_refs = Tensor::from({3, 1, 2}, {0.3, 0.7, 0.3, 0.7, 0.3, 0.7});
  const MatchResult d = match(dup, dup_refs, gt);
  CHECK(d.pos_index == 1);
  CHECK(d.costs[1] == d.costs[2]);
}

TEST_CASE("match and select agree with brute-force enumeration") {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 8), nq(1, 6), nt(1, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = nq(rng), t = nt(rng), h = dim(rng), w = dim(rng);
    const GroundTruth gt = brute::random_gt(t, h, w, rng);
    Tensor masks = brute::random_probs({n, t, h, w}, rng);
    Tensor refs = brute::random_refs(n, t, rng);
    if (trial % 4 == 0 && n > 1) {
      // Force an exact tie by copying query 0 over the last query.
      std::vector<double> m = masks.to_vector(), r = refs.to_vector();
      std::copy(m.begin(), m.begin() + long(t * h * w), m.end() - long(t * h * w));
      std::copy(r.begin(), r.begin() + long(2 * t), r.end() - long(2 * t));
      masks = Tensor::from({n, t, h, w}, m);
      refs = Tensor::from({n, t, 2}, r);
    }
    const auto costs = brute::match_costs(masks, refs, gt);
    const MatchResult got = match(masks, refs, gt);
    CHECK(got.pos_index == brute::argmin_first(costs));
    CHECK(testutil::max_abs_diff(got.costs, costs) < 1e-9);
    CHECK(select_inference(refs).index == brute::select(refs));
  }
}

TEST_CASE("match is invariant to monotone transforms of the costs") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const GroundTruth gt = brute::random_gt(2, 3, 3, rng);
    const Tensor masks = brute::random_probs({5, 2, 3, 3}, rng), refs = brute::random_refs(5, 2, rng);
    auto costs = match(masks, refs, gt).costs;
    for (double& c : costs) c = std::exp(3.0 * c) + 7.0;
    CHECK(brute::argmin_first(costs) == match(masks, refs, gt).pos_index);
  }
}

TEST_CASE("select_inference examples") {
  const Tensor refs = Tensor::from({3, 1, 2}, {0.9, 0.1, 0.3, 0.7, 0.8, 0.2});
  const Selection s = select_inference(refs);
  CHECK(s.index == 1);
  CHECK(s.scores == std::vector<double>{0.1, 0.7, 0.2});
  CHECK(select_inference(Tensor::from({3, 2, 2}, std::vector<double>(12, 0.5))).index == 0);
}

TEST_CASE("reference scores are invariant to a shared logit shift") {
  Rng rng(4);
  const Tensor logits = randn({4, 3, 2}, rng);
  std::vector<double> shifted = logits.to_vector();
  for (std::size_t i = 0; i < shifted.size(); i += 2) {
    const double c = double(i) * 0.37 - 2.0;
    shifted[i] += c;
    shifted[i + 1] += c;
  }
  const Selection a = select_inference(softmax(logits, -1));
  const Selection b = select_inference(softmax(Tensor::from({4, 3, 2}, shifted), -1));
  CHECK(a.index == b.index);
  CHECK(testutil::max_abs_diff(a.scores, b.scores) < 1e-9);
}

TEST_CASE("set loss is non-negative and vanishes for confident correct predictions") {
  Rng rng(5);
  LossWeights w;
  for (int trial = 0; trial < 30; ++trial) {
    const GroundTruth gt = brute::random_gt(2, 3, 3, rng);
    const LossTerms l = set_loss(randn({3, 2, 3, 3}, rng, 3.0), randn({3, 2, 2}, rng, 3.0), gt, trial % 3, w);
    CHECK(l.total.item() >= 0.0);
    CHECK(l.total.item() == doctest::Approx(5 * l.dice + 2 * l.focal + 2 * l.reference).epsilon(1e-12));
  }
  GroundTruth gt{Tensor::from({1, 2, 2}, {1, 1, 0, 0}), {1}};
  const Tensor masks = Tensor::from({2, 1, 2, 2}, {60, 60, -60, -60, 0, 0, 0, 0});
  const Tensor refs = Tensor::from({2, 1, 2}, {-60, 60, 60, -60});
  const LossTerms l = set_loss(masks, refs, gt, 0, w);
  CHECK(l.dice < 1e-12);
  CHECK(l.focal < 1e-20);
  CHECK(l.reference < 1e-20);
}

TEST_CASE("set loss supervises unmatched queries toward class zero") {
  GroundTruth gt{Tensor::zeros({1, 1, 1}), {0}};
  const Tensor masks = Tensor::zeros({2, 1, 1, 1});
  // Query 1 confidently claims the object; both should be pushed to class 0.
  const Tensor refs = Tensor::from({2, 1, 2}, {0.0, 0.0, 0.0, 5.0});
  const LossTerms l = set_loss(masks, refs, gt, 0, LossWeights{});
  const double expect = (std::log(2.0) + std::log1p(std::exp(5.0))) / 2.0;
  CHECK(l.reference == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("set loss gradient matches finite differences") {
  Rng rng(6);
  const GroundTruth gt = brute::random_gt(2, 3, 2, rng);
  const Tensor masks = randn({3, 2, 3, 2}, rng, 1.0, true), refs = randn({3, 2, 2}, rng, 1.0, true);
  CHECK(gradcheck([&] { return set_loss(masks, refs, gt, 1, LossWeights{}).total; }, {masks, refs}) < 1e-4);
}

TEST_CASE("final mask thresholds the upsampled logits") {
  const Tensor logits = Tensor::from({2, 1, 1, 1}, {-1.0, 2.0});
  const Tensor m = final_mask(logits, 1, 4, 3);
  CHECK(m.shape() == Shape{1, 4, 3});
  for (double v : m.to_vector()) CHECK(v == 1.0);
  CHECK_THROWS_AS(final_mask(logits, 2, 4, 3), DimensionError);
}

TEST_CASE("ground truth validation") {
  CHECK_NOTHROW(validate(GroundTruth{Tensor::from({2, 1, 1}, {1, 0}), {1, 0}}));
  CHECK_THROWS(validate(GroundTruth{Tensor::from({2, 1, 1}, {1, 1}), {1, 0}}));
  CHECK_THROWS(validate(GroundTruth{Tensor::from({2, 1, 1}, {1, 1}), {1}}));
}
