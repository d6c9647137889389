#pragma once

// Region similarity (Jaccard) and contour accuracy (boundary F) over binary
// mask sequences, with per-video and dataset-level aggregation.

#include <string>
#include <vector>

#include "catr/tensor.hpp"

namespace catr {

// pred, gt: [H, W] with nonzero = foreground. Both empty -> 1.
double jaccard(const Tensor& pred, const Tensor& gt);

// Default tolerance: max(1, round(0.008 * image diagonal)).
std::size_t default_boundary_tolerance(std::size_t height, std::size_t width);

// Foreground pixels with a 4-neighbour that is background or off-image.
std::vector<std::uint8_t> boundary_pixels(const Tensor& mask);

// F-measure of boundary precision/recall under a Chebyshev tolerance.
// Both boundaries empty -> 1; exactly one empty -> 0.
double boundary_f(const Tensor& pred, const Tensor& gt, std::size_t tol);
double boundary_f(const Tensor& pred, const Tensor& gt);

struct VideoScore {
  std::vector<double> frame_j;
  std::vector<double> frame_f;
  double j = 0.0;
  double f = 0.0;
};

struct EvalReport {
  std::vector<VideoScore> videos;
  double mean_j = 0.0;
  double mean_f = 0.0;

  std::string to_json() const;
};

// predictions and ground truths: one [T, H, W] tensor per video.
EvalReport evaluate(const std::vector<Tensor>& predictions, const std::vector<Tensor>& ground_truths);

}  // namespace catr
