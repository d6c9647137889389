#include "catr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace catr {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
  if (pred.rank() != 2 || pred.shape() != gt.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()) +
                         " must be equal [H,W]");
  }
}

// For every set pixel of `from`, is a set pixel of `to` within Chebyshev distance tol?
std::size_t matched(const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to, std::size_t h,
                    std::size_t w, std::size_t tol) {
  // Square dilation of `to`, separable: rows then columns.
  std::vector<std::uint8_t> rows(h * w, 0), dil(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t lo = x >= tol ? x - tol : 0, hi = std::min(w - 1, x + tol);
      for (std::size_t k = lo; k <= hi && !rows[y * w + x]; ++k) rows[y * w + x] = to[y * w + k];
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t lo = y >= tol ? y - tol : 0, hi = std::min(h - 1, y + tol);
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = lo; k <= hi && !dil[y * w + x]; ++k) dil[y * w + x] = rows[k * w + x];
    }
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < h * w; ++i) n += from[i] && dil[i];
  return n;
}

}  // namespace

double jaccard(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "jaccard");
  std::size_t inter = 0, uni = 0;
  const auto p = pred.data(), g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0.0, b = g[i] != 0.0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::size_t default_boundary_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::sqrt(double(height * height + width * width));
  return std::max<std::size_t>(1, std::size_t(std::lround(0.008 * diag)));
}

std::vector<std::uint8_t> boundary_pixels(const Tensor& mask) {
  if (mask.rank() != 2) throw DimensionError("boundary_pixels: expected [H,W], got " + shape_str(mask.shape()));
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  const auto m = mask.data();
  auto fg = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return y >= 0 && x >= 0 && y < std::ptrdiff_t(h) && x < std::ptrdiff_t(w) && m[std::size_t(y) * w + std::size_t(x)] != 0.0;
  };
  std::vector<std::uint8_t> out(h * w, 0);
  for (std::ptrdiff_t y = 0; y < std::ptrdiff_t(h); ++y) {
    for (std::ptrdiff_t x = 0; x < std::ptrdiff_t(w); ++x) {
      if (!fg(y, x)) continue;
      out[std::size_t(y) * w + std::size_t(x)] = !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1);
    }
  }
  return out;
}

double boundary_f(const Tensor& pred, const Tensor& gt, std::size_t tol) {
  check_pair(pred, gt, "boundary_f");
  const std::size_t h = pred.dim(0), w = pred.dim(1);
  const auto bp = boundary_pixels(pred), bg = boundary_pixels(gt);
  const std::size_t np = std::count(bp.begin(), bp.end(), 1), ng = std::count(bg.begin(), bg.end(), 1);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = double(matched(bp, bg, h, w, tol)) / double(np);
  const double recall = double(matched(bg, bp, h, w, tol)) / double(ng);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

double boundary_f(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "boundary_f");
  return boundary_f(pred, gt, default_boundary_tolerance(pred.dim(0), pred.dim(1)));
}

EvalReport evaluate(const std::vector<Tensor>& predictions, const std::vector<Tensor>& ground_truths) {
  if (predictions.size() != ground_truths.size()) {
    throw ValidationError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(ground_truths.size()) + " videos");
  }
  EvalReport r;
  for (std::size_t v = 0; v < predictions.size(); ++v) {
    const Tensor& p = predictions[v];
    const Tensor& g = ground_truths[v];
    if (p.rank() != 3 || p.shape() != g.shape()) {
      throw DimensionError("evaluate: video " + std::to_string(v) + " prediction " + shape_str(p.shape()) +
                           " vs ground truth " + shape_str(g.shape()));
    }
    const std::size_t t = p.dim(0), h = p.dim(1), w = p.dim(2);
    const std::size_t tol = default_boundary_tolerance(h, w);
    VideoScore s;
    for (std::size_t i = 0; i < t; ++i) {
      const Tensor pf = reshape(slice(p, 0, i, i + 1), {h, w});
      const Tensor gf = reshape(slice(g, 0, i, i + 1), {h, w});
      s.frame_j.push_back(jaccard(pf, gf));
      s.frame_f.push_back(boundary_f(pf, gf, tol));
    }
    for (std::size_t i = 0; i < t; ++i) {
      s.j += s.frame_j[i];
      s.f += s.frame_f[i];
    }
    if (t) {
      s.j /= double(t);
      s.f /= double(t);
    }
    r.mean_j += s.j;
    r.mean_f += s.f;
    r.videos.push_back(std::move(s));
  }
  if (!r.videos.empty()) {
    r.mean_j /= double(r.videos.size());
    r.mean_f /= double(r.videos.size());
  }
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json vids = nlohmann::json::array();
  for (const auto& v : videos) {
    vids.push_back({{"j", v.j}, {"f", v.f}, {"frame_j", v.frame_j}, {"frame_f", v.frame_f}});
  }
  return nlohmann::json{{"mean_j", mean_j}, {"mean_f", mean_f}, {"videos", vids}}.dump(2);
}

}  // namespace catr
