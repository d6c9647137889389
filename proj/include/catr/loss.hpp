#pragma once

// Sequence matching between query proposals and the ground-truth object
// sequence, the training loss, and inference-time selection.

#include <span>
#include <vector>

#include "catr/tensor.hpp"

namespace catr {

struct GroundTruth {
  Tensor masks;                 // [T, H, W] in {0, 1}
  std::vector<int> visibility;  // R_t in {0, 1}; R_t = 0 implies an empty mask
};

void validate(const GroundTruth& gt);

// Soft Dice over the whole sequence: (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
double dice_coeff(std::span<const double> pred, std::span<const double> gt, double eps = 1.0);
Tensor dice_coeff(const Tensor& pred, const Tensor& gt, double eps = 1.0);

// Per-pixel sigmoid focal loss on logits with {0,1} (or soft) targets,
// averaged over all elements.
Tensor sigmoid_focal_loss(const Tensor& logits, const Tensor& targets, double gamma = 2.0, double alpha = 0.25);
double focal_term(double prob, double target, double gamma = 2.0, double alpha = 0.25);

// Mean over frames of -[R log p1 + (1-R) log p0] given log-probabilities [T, 2].
double reference_cross_entropy(std::span<const double> log_probs, std::span<const int> visibility);

struct MatchResult {
  std::size_t pos_index = 0;
  std::vector<double> costs;
};

// mask_probs [N, T, H, W]; ref_probs [N, T, 2].
// cost_i = (1 - dice(M_i, M)) + mean_t CE(R_t, R_i,t); argmin with ties to the lowest index.
MatchResult match(const Tensor& mask_probs, const Tensor& ref_probs, const GroundTruth& gt, double dice_eps = 1.0);

struct LossWeights {
  double dice = 5.0;
  double focal = 2.0;
  double reference = 2.0;
  double gamma = 2.0;
  double alpha = 0.25;
  double dice_eps = 1.0;
};

struct LossTerms {
  Tensor total;
  double dice = 0.0;   // 1 - dice_coeff on the matched query
  double focal = 0.0;  // mean focal on the matched query
  double reference = 0.0;
};

// mask_logits [N, T, H, W] at ground-truth resolution; ref_logits [N, T, 2].
// Mask terms use the matched query only; the reference term covers all N
// queries, with unmatched queries supervised toward class 0.
LossTerms set_loss(const Tensor& mask_logits, const Tensor& ref_logits, const GroundTruth& gt, std::size_t pos_index,
                   const LossWeights& w);

struct Selection {
  std::size_t index = 0;
  std::vector<double> scores;  // mean over frames of P(referred)
};

// ref_probs [N, T, 2]; argmax of the mean foreground probability, ties to the lowest index.
Selection select_inference(const Tensor& ref_probs);

// Upsamples the selected query's logits [T, h, w] to [T, H, W] and thresholds at probability 0.5.
Tensor final_mask(const Tensor& mask_logits, std::size_t index, std::size_t height, std::size_t width);

}  // namespace catr
