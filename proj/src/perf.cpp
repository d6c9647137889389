#include "catr/perf.hpp"

#include <random>
#include <sstream>

#include "catr/davt.hpp"

namespace catr {

AttnCostReport analytic_costs(std::size_t frames, std::size_t h, std::size_t w) {
  if (frames == 0 || h == 0 || w == 0) throw ConfigError("analytic_costs: dimensions must be positive");
  AttnCostReport r;
  r.frames = frames;
  r.h = h;
  r.w = w;
  const std::uint64_t t = frames, p = std::uint64_t(h) * w;
  r.joint = (t * (p + 1)) * (t * (p + 1));
  r.spatial = t * (p + 1) * (p + 1);
  r.tav = p * t * t;
  r.tva = t * t;
  r.decoupled = r.spatial + r.tav + r.tva;
  r.ratio = double(r.joint) / double(r.decoupled);
  r.literal = (p + t) * (p + t);
  return r;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

std::uint64_t measure_peak(AttnVariant variant, std::size_t frames, std::size_t h, std::size_t w,
                           std::size_t channels, std::size_t heads, std::uint64_t seed, std::uint64_t limit_bytes) {
  const std::size_t p = h * w;
  if (variant == AttnVariant::Joint) {
    const std::uint64_t bytes = analytic_costs(frames, h, w).joint * heads * sizeof(double);
    if (bytes > limit_bytes) {
      throw ResourceError("joint attention at T=" + std::to_string(frames) + ", P=" + std::to_string(p) + " needs " +
                          std::to_string(bytes) + " score bytes, limit is " + std::to_string(limit_bytes));
    }
  }
  Rng rng(seed);
  ParamStore store;
  const DavtBlockParams block = make_davt_block(store, "bench", channels, heads, rng);
  const Tensor video = random_tensor({frames, p, channels}, rng);
  const Tensor audio = random_tensor({frames, channels}, rng);

  NoGradGuard no_grad;
  ScoreAudit& audit = ScoreAudit::current();
  audit.reset();
  if (variant == AttnVariant::Joint) {
    // Every video and audio token of every frame in one sequence.
    Tensor tokens = reshape(concat({video, reshape(audio, {frames, 1, channels})}, 1), {1, frames * (p + 1), channels});
    (void)multi_head_attention(tokens, tokens, block.spatial);
  } else {
    (void)davt_block({video, h, w}, {audio}, block);
  }
  const std::uint64_t peak = audit.peak_bytes;
  audit.reset();
  return peak;
}

std::string cost_csv_header() { return "T,h,w,joint,spatial,tav,tva,ratio,measured_joint,measured_decoupled"; }

std::string cost_csv_row(const AttnCostReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.frames << ',' << r.h << ',' << r.w << ',' << r.joint << ',' << r.spatial << ',' << r.tav << ',' << r.tva
     << ',' << std::fixed << r.ratio << ',' << r.measured_joint << ',' << r.measured_decoupled;
  return os.str();
}

}  // namespace catr
