#include "catr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "catr/features.hpp"
#include "catr/nn.hpp"
#include "catr/tensor_io.hpp"

namespace catr {

using nlohmann::json;

namespace {

constexpr std::array<std::array<double, 3>, kNumKinds> kBaseColors = {{
    {0.9, 0.25, 0.25},
    {0.25, 0.9, 0.25},
    {0.25, 0.35, 0.9},
}};

Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(salt)};
  return Rng(seq);
}

std::set<ShapeKind> kinds_of(const SceneSpec& spec) {
  std::set<ShapeKind> out;
  for (const auto& s : spec.shapes) out.insert(s.kind);
  return out;
}

// Places one shape of each kind with the outline gap respected in every frame.
std::vector<ShapeSpec> place_shapes(Rng& rng, std::vector<ShapeKind> kinds, std::size_t min_kinds,
                                    const SceneOptions& opt) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double span = opt.frames > 1 ? double(opt.frames - 1) : 1.0;
  for (int attempt = 0; attempt < 400; ++attempt) {
    std::vector<ShapeSpec> shapes;
    for (ShapeKind k : kinds) {
      ShapeSpec s;
      s.kind = k;
      s.size = uniform(opt.min_size, opt.max_size);
      const double xlo = s.size, xhi = double(opt.width) - s.size;
      const double ylo = s.size, yhi = double(opt.height) - s.size;
      s.x0 = uniform(xlo, xhi);
      s.y0 = uniform(ylo, yhi);
      const double ex = std::clamp(s.x0 + uniform(-opt.max_speed, opt.max_speed) * span, xlo, xhi);
      const double ey = std::clamp(s.y0 + uniform(-opt.max_speed, opt.max_speed) * span, ylo, yhi);
      s.vx = opt.frames > 1 ? (ex - s.x0) / span : 0.0;
      s.vy = opt.frames > 1 ? (ey - s.y0) / span : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        s.color[c] = std::clamp(kBaseColors[std::size_t(k)][c] + uniform(-opt.color_jitter, opt.color_jitter), 0.0, 1.0);
      }
      s.sounding.assign(opt.frames, 0);
      shapes.push_back(s);
    }
    bool ok = true;
    for (std::size_t t = 0; t < opt.frames && ok; ++t) {
      for (std::size_t i = 0; i < shapes.size() && ok; ++i) {
        for (std::size_t j = i + 1; j < shapes.size() && ok; ++j) {
          const double d = std::hypot(shapes[i].x(t) - shapes[j].x(t), shapes[i].y(t) - shapes[j].y(t));
          ok = d >= shapes[i].size + shapes[j].size + opt.min_gap;
        }
      }
    }
    if (ok) return shapes;
    if (attempt % 20 == 19 && kinds.size() > min_kinds) kinds.pop_back();
  }
  throw ValidationError("sample_scene: could not place shapes; canvas too small for the size and gap options");
}

json color_json(const std::array<double, 3>& c) { return json::array({c[0], c[1], c[2]}); }

std::array<double, 3> color_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("colour must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json spec_to_json(const SceneSpec& s) {
  json shapes = json::array();
  for (const auto& sh : s.shapes) {
    shapes.push_back({{"kind", kind_name(sh.kind)},
                      {"color", color_json(sh.color)},
                      {"x0", sh.x0},
                      {"y0", sh.y0},
                      {"vx", sh.vx},
                      {"vy", sh.vy},
                      {"size", sh.size},
                      {"sounding", sh.sounding}});
  }
  return {{"frames", s.frames},   {"height", s.height}, {"width", s.width},
          {"background", color_json(s.background)}, {"sigma", s.sigma},   {"seed", s.seed},
          {"shapes", shapes}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.frames = j.at("frames").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.background = color_from(j.at("background"));
  s.sigma = j.at("sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& js : j.at("shapes")) {
    ShapeSpec sh;
    sh.kind = kind_from_name(js.at("kind").get<std::string>());
    sh.color = color_from(js.at("color"));
    sh.x0 = js.at("x0").get<double>();
    sh.y0 = js.at("y0").get<double>();
    sh.vx = js.at("vx").get<double>();
    sh.vy = js.at("vy").get<double>();
    sh.size = js.at("size").get<double>();
    sh.sounding = js.at("sounding").get<std::vector<int>>();
    s.shapes.push_back(std::move(sh));
  }
  return s;
}

}  // namespace

std::string kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Circle:
      return "circle";
    case ShapeKind::Square:
      return "square";
    case ShapeKind::Triangle:
      return "triangle";
  }
  return "?";
}

ShapeKind kind_from_name(const std::string& name) {
  if (name == "circle") return ShapeKind::Circle;
  if (name == "square") return ShapeKind::Square;
  if (name == "triangle") return ShapeKind::Triangle;
  throw ValidationError("unknown shape kind '" + name + "'");
}

void validate(const SceneSpec& spec) {
  if (spec.frames == 0 || spec.height == 0 || spec.width == 0) throw ValidationError("scene has an empty dimension");
  if (!(spec.sigma >= 0.0)) throw ValidationError("scene noise level must be non-negative");
  bool any_sound = false;
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    if (s.sounding.size() != spec.frames) {
      throw ValidationError("shape " + std::to_string(i) + " has " + std::to_string(s.sounding.size()) +
                            " sounding flags for " + std::to_string(spec.frames) + " frames");
    }
    if (!(s.size > 0.0)) throw ValidationError("shape " + std::to_string(i) + " has a non-positive size");
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const double x = s.x(t), y = s.y(t);
      if (!(x >= 0.0 && x <= double(spec.width) && y >= 0.0 && y <= double(spec.height))) {
        throw ValidationError("shape " + std::to_string(i) + " centre leaves the canvas at frame " + std::to_string(t));
      }
      any_sound = any_sound || s.sounding[t] != 0;
    }
  }
  if (!any_sound) throw ValidationError("scene has no sounding shape in any frame");
}

bool covers(const ShapeSpec& shape, std::size_t t, double px, double py) {
  const double cx = shape.x(t), cy = shape.y(t), r = shape.size;
  switch (shape.kind) {
    case ShapeKind::Circle:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    case ShapeKind::Square:
      return std::abs(px - cx) <= r && std::abs(py - cy) <= r;
    case ShapeKind::Triangle: {
      const double top = cy - r;
      return py >= top && py <= cy + r && std::abs(px - cx) <= (py - top) / 2.0;
    }
  }
  return false;
}

std::vector<std::uint8_t> rasterize(const ShapeSpec& shape, std::size_t t, std::size_t height, std::size_t width) {
  std::vector<std::uint8_t> out(height * width, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) out[y * width + x] = covers(shape, t, double(x) + 0.5, double(y) + 0.5);
  }
  return out;
}

const std::array<std::array<double, 128>, kNumKinds>& kind_signatures() {
  static const auto sigs = [] {
    std::array<std::array<double, 128>, kNumKinds> s{};
    Rng rng(1234);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t k = 0; k < kNumKinds; ++k) {
      for (double& v : s[k]) v = dist(rng);
      // Gram-Schmidt against the earlier signatures, then normalise.
      for (std::size_t j = 0; j < k; ++j) {
        const double d = std::inner_product(s[k].begin(), s[k].end(), s[j].begin(), 0.0);
        for (std::size_t i = 0; i < 128; ++i) s[k][i] -= d * s[j][i];
      }
      const double n = std::sqrt(std::inner_product(s[k].begin(), s[k].end(), s[k].begin(), 0.0));
      for (double& v : s[k]) v /= n;
    }
    return s;
  }();
  return sigs;
}

AvvsSample render(const SceneSpec& spec) {
  validate(spec);
  const std::size_t T = spec.frames, H = spec.height, W = spec.width, K = spec.shapes.size();
  Rng rng = stream(spec.seed, 0x5eed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& sigs = kind_signatures();

  std::vector<double> video(T * H * W * 3), audio(T * kRawAudioDim, 0.0), masks(T * H * W, 0.0);
  std::vector<int> vis(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::vector<std::uint8_t>> raster(K);
    for (std::size_t i = 0; i < K; ++i) raster[i] = rasterize(spec.shapes[i], t, H, W);
    double* frame = video.data() + t * H * W * 3;
    for (std::size_t p = 0; p < H * W; ++p) {
      std::array<double, 3> c = spec.background;
      std::size_t top = K;
      for (std::size_t i = 0; i < K; ++i) {
        if (raster[i][p]) top = i;
      }
      if (top < K) c = spec.shapes[top].color;
      for (std::size_t ch = 0; ch < 3; ++ch) frame[p * 3 + ch] = c[ch];
      if (top < K && spec.shapes[top].sounding[t]) masks[t * H * W + p] = 1.0;
    }
    for (std::size_t i = 0; i < H * W * 3; ++i) frame[i] += spec.sigma * noise(rng);

    double* a = audio.data() + t * kRawAudioDim;
    std::size_t sounding = 0;
    for (const auto& s : spec.shapes) {
      if (!s.sounding[t]) continue;
      ++sounding;
      for (std::size_t i = 0; i < kRawAudioDim; ++i) a[i] += sigs[std::size_t(s.kind)][i];
    }
    if (sounding) {
      for (std::size_t i = 0; i < kRawAudioDim; ++i) a[i] /= double(sounding);
    }
    for (std::size_t i = 0; i < kRawAudioDim; ++i) a[i] += spec.sigma * noise(rng);
    vis[t] = std::any_of(masks.begin() + t * H * W, masks.begin() + (t + 1) * H * W, [](double v) { return v > 0; });
  }
  AvvsSample s;
  s.video = Tensor::from({T, H, W, 3}, std::move(video));
  s.audio = Tensor::from({T, kRawAudioDim}, std::move(audio));
  s.gt.masks = Tensor::from({T, H, W}, std::move(masks));
  s.gt.visibility = std::move(vis);
  s.spec = spec;
  return s;
}

SceneSpec sample_scene(std::uint64_t seed, const SceneOptions& opt) {
  if (opt.min_kinds < 1 || opt.max_kinds > kNumKinds || opt.min_kinds > opt.max_kinds) {
    throw ConfigError("scene options: kinds range must lie within [1, 3]");
  }
  Rng rng = stream(seed, 0x5ce7e);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = opt.min_kinds + std::uniform_int_distribution<std::size_t>(0, opt.max_kinds - opt.min_kinds)(rng);
  std::vector<ShapeKind> all = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle};
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);

  SceneSpec spec;
  spec.frames = opt.frames;
  spec.height = opt.height;
  spec.width = opt.width;
  spec.sigma = opt.sigma;
  spec.seed = seed;
  spec.shapes = place_shapes(rng, all, opt.min_kinds, opt);
  for (double& c : spec.background) c = 0.3 * unit(rng);

  const std::size_t n = spec.shapes.size();
  bool any = false;
  for (std::size_t t = 0; t < opt.frames; ++t) {
    if (unit(rng) < opt.silent) continue;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    spec.shapes[i].sounding[t] = 1;
    any = true;
    if (n > 1 && unit(rng) < opt.multi_source) {
      const std::size_t j = (i + 1 + std::uniform_int_distribution<std::size_t>(0, n - 2)(rng)) % n;
      spec.shapes[j].sounding[t] = 1;
    }
  }
  if (!any) spec.shapes[0].sounding[std::uniform_int_distribution<std::size_t>(0, opt.frames - 1)(rng)] = 1;
  return spec;
}

SwapPair audio_swap_pair(const SceneSpec& a, const SceneSpec& b) {
  validate(a);
  validate(b);
  if (a.frames != b.frames || a.height != b.height || a.width != b.width) {
    throw ValidationError("audio_swap_pair: scenes differ in frame count or canvas size");
  }
  if (kinds_of(a) != kinds_of(b)) throw ValidationError("audio_swap_pair: scenes contain different shape kinds");

  // `target` keeps its geometry; its shapes sound whenever a shape of the same kind sounds in `source`.
  auto follow = [](const SceneSpec& target, const SceneSpec& source) {
    SceneSpec out = target;
    for (auto& s : out.shapes) {
      for (std::size_t t = 0; t < out.frames; ++t) {
        s.sounding[t] = std::any_of(source.shapes.begin(), source.shapes.end(), [&](const ShapeSpec& o) {
          return o.kind == s.kind && o.sounding[t];
        });
      }
    }
    return out;
  };
  SwapPair p;
  p.a = render(a);
  p.b = render(b);
  p.swapped_a = render(follow(a, b));
  p.swapped_a.audio = p.b.audio;
  p.swapped_b = render(follow(b, a));
  p.swapped_b.audio = p.a.audio;
  return p;
}

std::pair<SceneSpec, SceneSpec> sample_swap_specs(std::uint64_t seed, const SceneOptions& opt) {
  Rng rng = stream(seed, 0x5a4b);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ShapeKind> kinds = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle};
  std::shuffle(kinds.begin(), kinds.end(), rng);
  kinds.resize(2);
  auto make = [&](std::size_t sounding_kind, std::uint64_t scene_seed) {
    SceneSpec s;
    s.frames = opt.frames;
    s.height = opt.height;
    s.width = opt.width;
    s.sigma = opt.sigma;
    s.seed = scene_seed;
    s.shapes = place_shapes(rng, kinds, 2, opt);
    for (double& c : s.background) c = 0.3 * unit(rng);
    for (auto& sh : s.shapes) sh.sounding.assign(opt.frames, sh.kind == kinds[sounding_kind] ? 1 : 0);
    return s;
  };
  SceneSpec a = make(0, seed * 2);
  SceneSpec b = make(1, seed * 2 + 1);
  return {a, b};
}

Dataset generate_dataset(std::size_t count, std::uint64_t seed, const SceneOptions& opt) {
  Dataset d;
  d.samples.reserve(count);
  Rng seeds = stream(seed, 0xda7a);
  for (std::size_t i = 0; i < count; ++i) d.samples.push_back(render(sample_scene(seeds(), opt)));
  return d;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json samples = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu", i);
    const fs::path sub = dir / name;
    fs::create_directories(sub);
    write_tensor(sub / "video.t", s.video);
    write_tensor(sub / "audio.t", s.audio);
    write_tensor(sub / "masks.t", s.gt.masks);
    std::vector<double> vis(s.gt.visibility.begin(), s.gt.visibility.end());
    write_tensor(sub / "vis.t", Tensor::from({vis.size()}, vis));
    samples.push_back({{"dir", name}, {"spec", spec_to_json(s.spec)}});
  }
  const json manifest = {{"schema", "catr-dataset"}, {"version", kDatasetSchemaVersion}, {"samples", samples}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("schema", "") != "catr-dataset" || manifest.value("version", 0) != kDatasetSchemaVersion) {
    throw FormatError(manifest_path.string() + ": unsupported dataset schema");
  }
  Dataset d;
  for (const auto& entry : manifest.at("samples")) {
    const auto sub = dir / entry.at("dir").get<std::string>();
    AvvsSample s;
    try {
      s.spec = spec_from_json(entry.at("spec"));
    } catch (const json::exception& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
    s.video = read_tensor(sub / "video.t");
    s.audio = read_tensor(sub / "audio.t");
    s.gt.masks = read_tensor(sub / "masks.t");
    const Tensor vis = read_tensor(sub / "vis.t");
    const std::size_t T = s.spec.frames, H = s.spec.height, W = s.spec.width;
    if (s.video.shape() != Shape{T, H, W, 3} || s.audio.shape() != Shape{T, kRawAudioDim} ||
        s.gt.masks.shape() != Shape{T, H, W} || vis.shape() != Shape{T}) {
      throw FormatError(sub.string() + ": tensor shapes disagree with the manifest");
    }
    for (double v : vis.data()) s.gt.visibility.push_back(v != 0.0);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace catr
