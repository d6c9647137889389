#pragma once

#include <cstddef>

#include "catr/tensor.hpp"

namespace catr {

// Per-video visual tokens, [T, P, C] with P = h * w (row-major grid).
struct VideoFeatures {
  Tensor tokens;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t frames() const { return tokens.dim(0); }
  std::size_t positions() const { return tokens.dim(1); }
  std::size_t channels() const { return tokens.dim(2); }
};

// Per-video audio tokens, one per frame: [T, C].
struct AudioFeatures {
  Tensor tokens;

  std::size_t frames() const { return tokens.dim(0); }
  std::size_t channels() const { return tokens.dim(1); }
};

// Throws DimensionError unless P == h*w and values are finite.
void validate(const VideoFeatures& v);
void validate(const AudioFeatures& a);

}  // namespace catr
