#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "catr/nn.hpp"
#include "catr/tensor.hpp"

namespace testutil {

inline catr::Tensor randn(catr::Shape shape, catr::Rng& rng, double scale = 1.0, bool grad = false) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(catr::shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return catr::Tensor::from(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : 1e300;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace testutil
