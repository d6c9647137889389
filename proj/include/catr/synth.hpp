#pragma once

// Synthetic audio-visual scenes: moving coloured shapes whose "sound" is a
// fixed orthonormal 128-d signature per shape kind.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "catr/loss.hpp"
#include "catr/tensor.hpp"

namespace catr {

enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };
inline constexpr std::size_t kNumKinds = 3;

std::string kind_name(ShapeKind kind);
ShapeKind kind_from_name(const std::string& name);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  std::array<double, 3> color{};
  double x0 = 0, y0 = 0;  // centre at frame 0, pixels
  double vx = 0, vy = 0;  // pixels per frame
  double size = 1;        // circle radius / square half-side / triangle half-height
  std::vector<int> sounding;  // one flag per frame

  double x(std::size_t t) const { return x0 + vx * double(t); }
  double y(std::size_t t) const { return y0 + vy * double(t); }
};

struct SceneSpec {
  std::size_t frames = 5;
  std::size_t height = 64;
  std::size_t width = 64;
  std::array<double, 3> background{};
  std::vector<ShapeSpec> shapes;  // z-order: later shapes are drawn on top
  double sigma = 0.05;
  std::uint64_t seed = 0;
};

// Throws ValidationError if a centre leaves the canvas, a sounding vector has
// the wrong length, or nothing sounds in any frame.
void validate(const SceneSpec& spec);

struct AvvsSample {
  Tensor video;  // [T, H, W, 3]
  Tensor audio;  // [T, 128]
  GroundTruth gt;
  SceneSpec spec;
};

// Pixel (row, col) is covered when its centre (col + 0.5, row + 0.5) lies in the shape.
bool covers(const ShapeSpec& shape, std::size_t t, double px, double py);
// [H*W] occupancy of one shape at frame t.
std::vector<std::uint8_t> rasterize(const ShapeSpec& shape, std::size_t t, std::size_t height, std::size_t width);

// Orthonormal signature of each kind in R^128 (fixed, seeded).
const std::array<std::array<double, 128>, kNumKinds>& kind_signatures();

AvvsSample render(const SceneSpec& spec);

struct SceneOptions {
  std::size_t frames = 5;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_kinds = 2;
  std::size_t max_kinds = 3;
  double min_size = 10.0;
  double max_size = 16.0;
  double max_speed = 2.0;  // pixels per frame along each axis
  double min_gap = 10.0;   // between shape outlines, every frame
  double multi_source = 0.3;
  double silent = 0.1;
  double sigma = 0.05;
  double color_jitter = 0.15;
};

// Random scene: distinct kinds, kind-specific base colours, per-frame sounding draw.
SceneSpec sample_scene(std::uint64_t seed, const SceneOptions& opt = {});

struct SwapPair {
  AvvsSample a, b;
  AvvsSample swapped_a;  // a's frames, b's audio
  AvvsSample swapped_b;  // b's frames, a's audio
};

// Both scenes must share T, canvas size and the set of shape kinds.
SwapPair audio_swap_pair(const SceneSpec& a, const SceneSpec& b);
// Two scenes with the same two kinds where a's first kind and b's second kind
// sound in every frame.
std::pair<SceneSpec, SceneSpec> sample_swap_specs(std::uint64_t seed, const SceneOptions& opt = {});

struct Dataset {
  std::vector<AvvsSample> samples;
};

Dataset generate_dataset(std::size_t count, std::uint64_t seed, const SceneOptions& opt = {});

inline constexpr int kDatasetSchemaVersion = 1;
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace catr
