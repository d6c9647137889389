#pragma once

// Training loop, inference and evaluation of a CatrModel on synthetic data.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "catr/config.hpp"
#include "catr/metrics.hpp"
#include "catr/model.hpp"
#include "catr/synth.hpp"

namespace catr {

// Mask logits [N, T, h, w] bilinearly resized to [N, T, H, W].
Tensor upsample_mask_logits(const Tensor& logits, std::size_t height, std::size_t width);

struct SampleLoss {
  LossTerms terms;
  std::size_t pos_index = 0;
};

// Forward, match at ground-truth resolution, and the set loss for one sample.
SampleLoss sample_loss(const CatrModel& model, const AvvsSample& sample, const LossWeights& weights);

class Adam {
 public:
  Adam(const ParamStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct LossLogRow {
  std::size_t step = 0;
  double dice = 0, focal = 0, reference = 0, total = 0;
};

std::string loss_log_header();
std::string loss_log_line(const LossLogRow& row);

struct TrainOptions {
  // When non-empty: loss.csv, checkpoints/step_NNNNNN and final/ are written here.
  std::filesystem::path out_dir;
  std::function<void(const LossLogRow&)> on_step;
};

struct TrainResult {
  CatrModel model;
  std::vector<LossLogRow> log;
};

// Throws NumericError on a non-finite loss after writing nan_dump/ under out_dir.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options = {});

struct Prediction {
  Tensor masks;  // [T, H, W] in {0, 1}
  std::size_t query = 0;
  std::vector<double> scores;
};

Prediction predict(const CatrModel& model, const Tensor& video, const Tensor& audio);
std::vector<Prediction> predict_all(const CatrModel& model, const Dataset& data);
EvalReport evaluate_model(const CatrModel& model, const Dataset& data);

// Binary PGM of one [H, W] mask and a PPM of an [H, W, 3] frame with the mask
// blended in red at `alpha`.
void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask);
void write_overlay_ppm(const std::filesystem::path& path, const Tensor& frame, const Tensor& mask, double alpha = 0.5);

}  // namespace catr
