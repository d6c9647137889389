#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "catr/checkpoint.hpp"
#include "catr/train.hpp"
#include "helpers.hpp"

using namespace catr;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(std::size_t steps) {
  RunConfig c = desk_preset();
  c.model.channels = 8;
  c.model.gate_channels = 8;
  c.model.heads = 2;
  c.model.num_queries = 3;
  c.model.decoder_layers = 1;
  c.model.frames = 2;
  c.optimizer.steps = steps;
  c.optimizer.batch_size = 2;
  c.optimizer.learning_rate = 1e-3;
  c.optimizer.checkpoint_every = 0;
  c.data.height = 16;
  c.data.width = 16;
  return c;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed) {
  SceneOptions opt;
  opt.frames = 2;
  opt.height = 16;
  opt.width = 16;
  opt.min_size = 3;
  opt.max_size = 4;
  opt.min_gap = 2;
  return generate_dataset(n, seed, opt);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("loss log lines") {
  CHECK(loss_log_header() == "step,dice,focal,ref,total");
  CHECK(loss_log_line({3, 0.5, 0.25, 1.0, 2.0}) == "3,0.5,0.25,1,2");
}

TEST_CASE("Adam first step moves each parameter by about lr against the gradient sign") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from({3}, {1.0, -2.0, 0.5}, true));
  Adam adam(store, 0.1);
  sum(w * Tensor::from({3}, {2.0, -3.0, 0.0})).backward();
  adam.step(store);
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.data()[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(w.data()[2] == 0.5);
  CHECK(adam.steps() == 1);
}

TEST_CASE("one optimisation step on one sample reduces its loss") {
  RunConfig c = tiny_config(1);
  const Dataset data = tiny_data(1, 1);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CatrModel model(c.model, seed);
    Adam adam(model.params(), 1e-3);
    const LossTerms first = sample_loss(model, data.samples[0], c.loss).terms;
    first.total.backward();
    adam.step(model.params());
    CHECK(sample_loss(model, data.samples[0], c.loss).terms.total.item() < first.total.item());
  }
}

TEST_CASE("identical seeds give bit-identical loss logs") {
  const Dataset data = tiny_data(4, 2);
  const fs::path d1 = fresh_dir("catr_train_det1"), d2 = fresh_dir("catr_train_det2");
  const auto r1 = train(tiny_config(3), data, {d1, {}});
  const auto r2 = train(tiny_config(3), data, {d2, {}});
  REQUIRE(r1.log.size() == 3);
  CHECK(read_file(d1 / "loss.csv") == read_file(d2 / "loss.csv"));
  CHECK(read_file(d1 / "loss.csv").rfind(loss_log_header(), 0) == 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r1.log[i].total == r2.log[i].total);
  RunConfig other = tiny_config(3);
  other.optimizer.seed = 1;
  CHECK(train(other, data).log[0].total != r1.log[0].total);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("checkpoint save and load reproduce evaluation exactly") {
  const Dataset data = tiny_data(3, 3);
  const fs::path dir = fresh_dir("catr_train_ckpt");
  RunConfig c = tiny_config(2);
  const auto r = train(c, data, {dir, {}});
  CHECK(fs::exists(dir / "final" / "manifest.json"));
  const LoadedCheckpoint ck = load_checkpoint(dir / "final");
  CHECK(ck.step == 2);
  CHECK(to_json(ck.config) == to_json(c));
  const auto& a = r.model.params().entries();
  const auto& b = ck.model.params().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(testutil::bit_equal(a[i].second.data(), b[i].second.data()));
  }
  const EvalReport e1 = evaluate_model(r.model, data), e2 = evaluate_model(ck.model, data);
  CHECK(e1.mean_j == e2.mean_j);
  CHECK(e1.mean_f == e2.mean_f);
  CHECK(e1.to_json() == e2.to_json());
  CHECK(load_checkpoint(dir / "final" / "manifest.json").step == 2);
  fs::remove_all(dir);
}

TEST_CASE("loading a checkpoint with a missing parameter file fails") {
  const fs::path dir = fresh_dir("catr_train_badckpt");
  RunConfig c = tiny_config(1);
  CatrModel model(c.model, 0);
  save_checkpoint(dir, model, c, 0);
  fs::remove(dir / "p0000.t");
  CHECK_THROWS(load_checkpoint(dir));
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss raises NumericError and dumps the batch") {
  Dataset data = tiny_data(1, 4);
  std::vector<double> m = data.samples[0].gt.masks.to_vector();
  m[0] = std::nan("");
  data.samples[0].gt.masks = Tensor::from(data.samples[0].gt.masks.shape(), m);
  const fs::path dir = fresh_dir("catr_train_nan");
  CHECK_THROWS_AS(train(tiny_config(2), data, {dir, {}}), NumericError);
  CHECK(fs::exists(dir / "nan_dump" / "info.txt"));
  CHECK(fs::exists(dir / "nan_dump" / "video.t"));
  fs::remove_all(dir);
}

TEST_CASE("training rejects mismatched data") {
  CHECK_THROWS_AS(train(tiny_config(1), Dataset{}), ValidationError);
  SceneOptions opt;
  opt.frames = 3;
  opt.height = 16;
  opt.width = 16;
  opt.min_size = 3;
  opt.max_size = 4;
  opt.min_gap = 2;
  CHECK_THROWS_AS(train(tiny_config(1), generate_dataset(1, 0, opt)), ValidationError);
}

TEST_CASE("predictions are binary masks at frame resolution") {
  const Dataset data = tiny_data(2, 5);
  CatrModel model(tiny_config(1).model, 0);
  const auto preds = predict_all(model, data);
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].masks.shape() == Shape{2, 16, 16});
  for (double v : preds[0].masks.to_vector()) CHECK((v == 0.0 || v == 1.0));
  CHECK(preds[0].scores.size() == 3);
  CHECK(preds[0].query < 3);
}

TEST_CASE("mask images") {
  const fs::path dir = fresh_dir("catr_train_img");
  fs::create_directories(dir);
  const Tensor mask = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 1});
  write_mask_pgm(dir / "m.pgm", mask);
  const std::string pgm = read_file(dir / "m.pgm");
  CHECK(pgm.rfind("P5\n3 2\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n3 2\n255\n").size() + 6);
  CHECK(static_cast<unsigned char>(pgm[pgm.size() - 6]) == 255);
  write_overlay_ppm(dir / "o.ppm", Tensor::full({2, 3, 3}, 0.0), mask);
  const std::string ppm = read_file(dir / "o.ppm");
  CHECK(ppm.rfind("P6\n3 2\n255\n", 0) == 0);
  CHECK(ppm.size() == std::string("P6\n3 2\n255\n").size() + 18);
  fs::remove_all(dir);
}

TEST_CASE("upsampled mask logits keep query and frame axes") {
  const Tensor l = Tensor::full({3, 2, 2, 2}, 1.5);
  const Tensor u = upsample_mask_logits(l, 8, 8);
  CHECK(u.shape() == Shape{3, 2, 8, 8});
  for (double v : u.to_vector()) CHECK(v == doctest::Approx(1.5));
}
