#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "catr/gradcheck.hpp"
#include "catr/tensor_io.hpp"
#include "helpers.hpp"

using namespace catr;
using testutil::randn;

TEST_CASE("matmul identity and hand expansion") {
  Rng rng(1);
  Tensor x = randn({2, 2}, rng);
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(testutil::bit_equal(matmul(eye, x).data(), x.data()));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at({0, 0}) == 3.0);
  CHECK(c.at({1, 0}) == 7.0);
}

TEST_CASE("matmul matches a loop oracle and its gradient matches finite differences") {
  Rng rng(2);
  Tensor a = randn({3, 5}, rng, 1.0, true), b = randn({5, 4}, rng, 1.0, true);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  CHECK(gradcheck([&] { return sum(matmul(a, b)); }, {a, b}) < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("softmax values") {
  const Tensor s0 = softmax(Tensor::from({2}, {0, 0}), 0);
  CHECK(s0.data()[0] == doctest::Approx(0.5));
  CHECK(s0.data()[1] == doctest::Approx(0.5));
  const Tensor big = softmax(Tensor::from({2}, {1000, 1000}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(big.data()[1]));

  const Tensor s = softmax(Tensor::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(s.data()[i] == doctest::Approx(std::exp(i + 1.0) / z).epsilon(1e-12));
  CHECK(s.data()[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(s.data()[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(s.data()[2] == doctest::Approx(0.6652).epsilon(1e-3));
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = randn({3, 4, 5}, rng, 10.0);
    for (std::ptrdiff_t axis : {0, 1, 2}) {
      const Tensor s = softmax(x, axis);
      const Tensor sums = sum_axis(s, axis);
      for (double v : s.data()) CHECK(v >= 0.0);
      for (double v : sums.data()) CHECK(std::abs(v - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {1.0, NAN}), 0), NumericError);
}

TEST_CASE("elementwise suite basics") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::from({3}, {-1, 0, 2})).to_vector() == std::vector<double>{0, 0, 2});

  const Tensor rows = Tensor::from({3, 2}, {4, 5, 4, 5, 4, 5});
  CHECK(mean_pool(rows, 0).to_vector() == std::vector<double>{4, 5});

  Rng rng(4);
  const Tensor x = randn({1, 3, 3, 2}, rng);
  const Tensor w = Tensor::from({1, 1, 2, 2}, {2, 0, 0, 2});
  const Tensor y = conv2d_1x1(x, w, Tensor());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == 2.0 * x.data()[i]);
}

TEST_CASE("conv2d_3x3 is same-padded cross-correlation") {
  Rng rng(5);
  const Tensor x = randn({2, 5, 4, 3}, rng), w = randn({3, 3, 3, 2}, rng), b = randn({2}, rng);
  const Tensor y = conv2d_3x3(x, w, b);
  REQUIRE(y.shape() == Shape{2, 5, 4, 2});
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::ptrdiff_t i = 0; i < 5; ++i) {
      for (std::ptrdiff_t j = 0; j < 4; ++j) {
        for (std::size_t o = 0; o < 2; ++o) {
          double acc = b.data()[o];
          for (std::ptrdiff_t di = -1; di <= 1; ++di) {
            for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
              const std::ptrdiff_t si = i + di, sj = j + dj;
              if (si < 0 || sj < 0 || si >= 5 || sj >= 4) continue;
              for (std::size_t c = 0; c < 3; ++c) {
                acc += x.at({n, std::size_t(si), std::size_t(sj), c}) * w.at({std::size_t(di + 1), std::size_t(dj + 1), c, o});
              }
            }
          }
          worst = std::max(worst, std::abs(acc - y.at({n, std::size_t(i), std::size_t(j), o})));
        }
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("broadcasting is limited to scalars and trailing suffixes") {
  const Tensor a = Tensor::zeros({2, 3, 4});
  CHECK(add(a, Tensor::zeros({4})).shape() == a.shape());
  CHECK(add(a, Tensor::zeros({3, 4})).shape() == a.shape());
  CHECK(add(Tensor::scalar(1.0), a).shape() == a.shape());
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("layer_norm slices have zero mean and unit variance") {
  Rng rng(6);
  const Tensor x = randn({4, 7, 5}, rng, 3.0);
  for (std::ptrdiff_t axis : {0, 1, 2}) {
    const Tensor y = layer_norm(x, axis);
    const Tensor mu = mean_pool(y, axis);
    const Tensor var = mean_pool(square(y), axis);
    for (double m : mu.data()) CHECK(std::abs(m) < 1e-6);
    for (double v : var.data()) CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("gradcheck spot values") {
  Rng rng(7);
  Tensor x = randn({3, 4}, rng, 1.0, true);
  CHECK(gradcheck([&] { return sum(square(x)); }, {x}) < 1e-8);
  Tensor y = randn({2, 5}, rng, 1.0, true);
  CHECK(gradcheck([&] { return sum(softmax(y, 1)); }, {y}) < 1e-6);
  for (double g : y.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("gradcheck randomized shapes for core ops") {
  Rng rng(8);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    Tensor a = randn({m, k}, rng, 1.0, true), b = randn({k, n}, rng, 1.0, true), c = randn({n}, rng, 1.0, true);
    const Tensor weights = randn({m, n}, rng);
    CHECK(gradcheck([&] { return sum(softmax(matmul(a, b) + c, 1) * weights); }, {a, b, c}) < 1e-4);
    CHECK(gradcheck([&] { return sum(layer_norm(matmul(a, b), 0) * weights); }, {a, b}) < 1e-4);
    CHECK(gradcheck([&] { return sum(sigmoid(matmul(a, b)) * weights); }, {a, b}) < 1e-4);
  }
}

TEST_CASE("gradcheck detects a corrupted backward") {
  // y = x^3 whose backward wrongly reports 2x.
  auto bad_cube = [](const Tensor& x) {
    std::vector<double> out;
    for (double v : x.data()) out.push_back(v * v * v);
    return detail::make_result(x.shape(), std::move(out), "bad_cube", {x}, [](detail::Node& self) {
      auto& in = *self.inputs[0];
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0 * in.data[i];
    });
  };
  Tensor x = Tensor::from({3}, {0.5, 1.5, -2.0}, true);
  CHECK(gradcheck([&] { return sum(bad_cube(x)); }, {x}) > 1e-2);
}

TEST_CASE("gradcheck reports non-finite values") {
  Tensor x = Tensor::from({2}, {-1.0, 2.0}, true);
  CHECK_THROWS_AS(gradcheck([&] { return sum(log(x)); }, {x}), NumericError);
}

TEST_CASE("gradcheck registry covers every op and passes") {
  const auto& reg = gradcheck_registry();
  std::set<std::string> names;
  for (const auto& c : reg) names.insert(c.name);
  CHECK(names.size() == reg.size());
  for (const char* op : {"matmul", "bmm", "linear", "add", "mul", "sigmoid", "relu", "softmax", "log_softmax",
                         "layer_norm", "layer_norm_affine", "mean_pool", "concat", "conv2d_1x1", "conv2d_3x3",
                         "upsample_bilinear", "multi_head_attention", "extract_visual", "embed_audio",
                         "spatial_fusion", "temporal_av", "temporal_va", "davt_block", "gate_pair", "gate_fold_L2",
                         "build_seg_features", "decode_queries", "dynamic_masks", "reference_head", "decoder_stack",
                         "dice_coeff", "sigmoid_focal_loss", "set_loss", "catr_model_loss"}) {
    CHECK_MESSAGE(names.count(op) == 1, op);
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(9);
    Tensor a = randn({4, 6}, rng, 1.0, true), b = randn({6, 3}, rng, 1.0, true);
    sum(softmax(matmul(a, b), 1) * matmul(a, b)).backward();
    std::vector<double> g(a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("tape is topologically ordered") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = sigmoid(x) * x;
  Tensor z = sum(y + y);
  const auto names = Tape::record(z).op_names();
  REQUIRE(!names.empty());
  CHECK(names.back() == z.op_name());
  const auto pos = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) - names.begin(); };
  CHECK(pos("sigmoid") < pos("mul"));
  CHECK(pos("mul") < pos("add"));
}

TEST_CASE("tensor file round trip and corruption") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "catr_tensor_io_test";
  fs::create_directories(dir);
  Rng rng(10);
  const Tensor t = randn({2, 3, 4}, rng);
  write_tensor(dir / "a.t", t);
  const Tensor back = read_tensor(dir / "a.t");
  CHECK(back.shape() == t.shape());
  CHECK(testutil::bit_equal(back.data(), t.data()));

  const auto bytes = encode_tensor(t);
  CHECK(bytes[0] == 'C');
  CHECK(bytes[4] == 1);   // version
  CHECK(bytes[5] == 1);   // f64
  CHECK(bytes[6] == 3);   // rank
  CHECK(bytes[8] == 2);   // first dim, little-endian
  CHECK(bytes.size() == 8 + 3 * 4 + 24 * 8);

  const auto f32 = decode_tensor(encode_tensor(t, DType::F32));
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(f32.data()[i] == double(float(t.data()[i])));

  {
    std::ofstream out(dir / "short.t", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size() - 5));
  }
  try {
    read_tensor(dir / "short.t");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("short.t") != std::string::npos);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
  fs::remove_all(dir);
}
