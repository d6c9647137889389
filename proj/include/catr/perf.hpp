#pragma once

// Attention cost accounting: joint spatio-temporal attention over all
// T*(P+1) tokens versus the decoupled block (spatial + temporal A-to-V +
// temporal V-to-A), counted in pre-softmax score entries.

#include <cstdint>
#include <string>

#include "catr/errors.hpp"

namespace catr {

struct AttnCostReport {
  std::size_t frames = 0, h = 0, w = 0;
  std::size_t channels = 0, heads = 0;
  std::uint64_t joint = 0;     // (T(P+1))^2
  std::uint64_t spatial = 0;   // T(P+1)^2
  std::uint64_t tav = 0;       // P T^2
  std::uint64_t tva = 0;       // T^2
  std::uint64_t decoupled = 0;
  double ratio = 0.0;          // joint / decoupled
  std::uint64_t literal = 0;   // (P+T)^2, a single attention over P+T tokens
  std::uint64_t measured_joint = 0;      // peak score bytes, 0 if not measured
  std::uint64_t measured_decoupled = 0;
};

AttnCostReport analytic_costs(std::size_t frames, std::size_t h, std::size_t w);

enum class AttnVariant { Joint, Decoupled };

// Peak live bytes of attention score buffers during one no-grad forward of the
// variant at (T, h, w, C, heads) with random inputs and weights. Throws
// ResourceError when the joint score buffer would exceed `limit_bytes`.
std::uint64_t measure_peak(AttnVariant variant, std::size_t frames, std::size_t h, std::size_t w,
                           std::size_t channels, std::size_t heads, std::uint64_t seed = 0,
                           std::uint64_t limit_bytes = std::uint64_t(1) << 30);

std::string cost_csv_header();
std::string cost_csv_row(const AttnCostReport& r);

}  // namespace catr
