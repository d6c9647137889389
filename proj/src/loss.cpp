#include "catr/loss.hpp"

#include <cmath>

namespace catr {

void validate(const GroundTruth& gt) {
  if (gt.masks.rank() != 3) throw DimensionError("ground truth masks must be [T,H,W]");
  const std::size_t t = gt.masks.dim(0);
  if (gt.visibility.size() != t) throw DimensionError("visibility length differs from frame count");
  const std::size_t frame = gt.masks.numel() / t;
  const auto m = gt.masks.data();
  for (std::size_t i = 0; i < t; ++i) {
    if (gt.visibility[i] != 0) continue;
    for (std::size_t j = 0; j < frame; ++j) {
      if (m[i * frame + j] != 0.0) throw ValidationError("frame " + std::to_string(i) + " is invisible but has mask pixels");
    }
  }
}

double dice_coeff(std::span<const double> pred, std::span<const double> gt, double eps) {
  if (pred.size() != gt.size()) throw DimensionError("dice_coeff: sizes differ");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  return (2.0 * inter + eps) / (sp + sg + eps);
}

Tensor dice_coeff(const Tensor& pred, const Tensor& gt, double eps) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("dice_coeff: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  Tensor num = add_scalar(scale(sum(pred * gt), 2.0), eps);
  Tensor den = add_scalar(sum(pred) + sum(gt), eps);
  return num * reciprocal(den);
}

double focal_term(double prob, double target, double gamma, double alpha) {
  const double pos = -alpha * std::pow(1.0 - prob, gamma) * std::log(prob);
  const double neg_part = -(1.0 - alpha) * std::pow(prob, gamma) * std::log(1.0 - prob);
  return target * pos + (1.0 - target) * neg_part;
}

Tensor sigmoid_focal_loss(const Tensor& logits, const Tensor& targets, double gamma, double alpha) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("focal loss: " + shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  }
  const auto x = logits.data();
  const auto g = targets.data();
  const std::size_t n = x.size();
  auto log_sig = [](double v) { return v < 0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v)); };
  auto sig = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  double total = 0.0;
  std::vector<double> dfdx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sig(x[i]);
    const double q = sig(-x[i]);  // 1 - p without cancellation
    const double logp = log_sig(x[i]);
    const double logq = log_sig(-x[i]);
    const double pos = -alpha * std::pow(q, gamma) * logp;
    const double neg_part = -(1.0 - alpha) * std::pow(p, gamma) * logq;
    total += g[i] * pos + (1.0 - g[i]) * neg_part;
    const double dpos = alpha * std::pow(q, gamma) * (gamma * p * logp - q);
    const double dneg = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * q * logq);
    dfdx[i] = (g[i] * dpos + (1.0 - g[i]) * dneg) / static_cast<double>(n);
  }
  const double value = total / static_cast<double>(n);
  return detail::make_result({}, {value}, "sigmoid_focal_loss", {logits},
                             [dfdx = std::move(dfdx)](detail::Node& self) {
    detail::Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[0] * dfdx[i];
  });
}

double reference_cross_entropy(std::span<const double> log_probs, std::span<const int> visibility) {
  if (log_probs.size() != 2 * visibility.size()) throw DimensionError("reference CE: expected [T,2] log-probabilities");
  double total = 0.0;
  for (std::size_t t = 0; t < visibility.size(); ++t) {
    total -= visibility[t] ? log_probs[2 * t + 1] : log_probs[2 * t];
  }
  return total / static_cast<double>(visibility.size());
}

MatchResult match(const Tensor& mask_probs, const Tensor& ref_probs, const GroundTruth& gt, double dice_eps) {
  const std::size_t n = mask_probs.dim(0);
  const std::size_t t = gt.visibility.size();
  if (n == 0) throw ConfigError("match: no proposals");
  if (ref_probs.rank() != 3 || ref_probs.dim(0) != n || ref_probs.dim(1) != t || ref_probs.dim(2) != 2) {
    throw DimensionError("match: reference probabilities " + shape_str(ref_probs.shape()) + " do not cover " +
                         std::to_string(n) + " queries x " + std::to_string(t) + " frames");
  }
  const std::size_t seq = gt.masks.numel();
  if (mask_probs.numel() != n * seq) {
    throw DimensionError("match: mask proposals " + shape_str(mask_probs.shape()) + " vs ground truth " +
                         shape_str(gt.masks.shape()));
  }
  MatchResult r;
  r.costs.resize(n);
  const auto probs = mask_probs.data();
  const auto refs = ref_probs.data();
  std::vector<double> logs(2 * t);
  for (std::size_t i = 0; i < n; ++i) {
    const double dice = dice_coeff(probs.subspan(i * seq, seq), gt.masks.data(), dice_eps);
    for (std::size_t j = 0; j < 2 * t; ++j) logs[j] = std::log(refs[i * 2 * t + j]);
    r.costs[i] = (1.0 - dice) + reference_cross_entropy(logs, gt.visibility);
    if (r.costs[i] < r.costs[r.pos_index]) r.pos_index = i;
  }
  return r;
}

LossTerms set_loss(const Tensor& mask_logits, const Tensor& ref_logits, const GroundTruth& gt, std::size_t pos_index,
                   const LossWeights& w) {
  const std::size_t n = mask_logits.dim(0);
  const std::size_t t = gt.visibility.size();
  if (pos_index >= n) throw DimensionError("set_loss: matched index out of range");
  if (mask_logits.rank() != 4 || mask_logits.dim(1) != t || mask_logits.dim(2) != gt.masks.dim(1) ||
      mask_logits.dim(3) != gt.masks.dim(2)) {
    throw DimensionError("set_loss: mask logits " + shape_str(mask_logits.shape()) + " vs ground truth " +
                         shape_str(gt.masks.shape()));
  }
  Tensor matched = reshape(slice(mask_logits, 0, pos_index, pos_index + 1), gt.masks.shape());
  Tensor dice_loss = add_scalar(neg(dice_coeff(sigmoid(matched), gt.masks, w.dice_eps)), 1.0);
  Tensor focal = sigmoid_focal_loss(matched, gt.masks, w.gamma, w.alpha);

  std::vector<double> targets(n * t * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < t; ++f) {
      const bool referred = i == pos_index && gt.visibility[f] != 0;
      targets[(i * t + f) * 2 + (referred ? 1 : 0)] = 1.0;
    }
  }
  Tensor onehot = Tensor::from({n, t, 2}, std::move(targets));
  Tensor ref_loss = scale(sum(log_softmax(ref_logits, -1) * onehot), -1.0 / static_cast<double>(n * t));

  LossTerms out;
  out.dice = dice_loss.item();
  out.focal = focal.item();
  out.reference = ref_loss.item();
  out.total = scale(dice_loss, w.dice) + scale(focal, w.focal) + scale(ref_loss, w.reference);
  return out;
}

Selection select_inference(const Tensor& ref_probs) {
  if (ref_probs.rank() != 3 || ref_probs.dim(2) != 2) {
    throw DimensionError("select_inference: expected [N,T,2], got " + shape_str(ref_probs.shape()));
  }
  const std::size_t n = ref_probs.dim(0), t = ref_probs.dim(1);
  const auto p = ref_probs.data();
  Selection s;
  s.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t f = 0; f < t; ++f) total += p[(i * t + f) * 2 + 1];
    s.scores[i] = total / static_cast<double>(t);
    if (s.scores[i] > s.scores[s.index]) s.index = i;
  }
  return s;
}

Tensor final_mask(const Tensor& mask_logits, std::size_t index, std::size_t height, std::size_t width) {
  if (mask_logits.rank() != 4 || index >= mask_logits.dim(0)) {
    throw DimensionError("final_mask: bad logits " + shape_str(mask_logits.shape()) + " or index");
  }
  NoGradGuard no_grad;
  const std::size_t t = mask_logits.dim(1);
  Tensor chosen = reshape(slice(mask_logits, 0, index, index + 1), {t, mask_logits.dim(2), mask_logits.dim(3)});
  Tensor up = upsample_bilinear(chosen, height, width);
  std::vector<double> bits(up.numel());
  const auto v = up.data();
  // sigmoid(x) >= 0.5  <=>  x >= 0
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = v[i] >= 0.0 ? 1.0 : 0.0;
  return Tensor::from({t, height, width}, std::move(bits));
}

}  // namespace catr
