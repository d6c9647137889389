#include "catr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "catr/checkpoint.hpp"
#include "catr/tensor_io.hpp"

namespace catr {

Tensor upsample_mask_logits(const Tensor& logits, std::size_t height, std::size_t width) {
  if (logits.rank() != 4) throw DimensionError("upsample_mask_logits: expected [N,T,h,w], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), t = logits.dim(1);
  const Tensor flat = reshape(logits, {n * t, logits.dim(2), logits.dim(3)});
  return reshape(upsample_bilinear(flat, height, width), {n, t, height, width});
}

SampleLoss sample_loss(const CatrModel& model, const AvvsSample& sample, const LossWeights& weights) {
  const ModelOutput out = model.forward(sample.video, sample.audio);
  const std::size_t H = sample.gt.masks.dim(1), W = sample.gt.masks.dim(2);
  const Tensor up = upsample_mask_logits(out.masks.logits, H, W);
  SampleLoss r;
  {
    NoGradGuard no_grad;
    r.pos_index = match(sigmoid(up.detach()), out.refs.probs.detach(), sample.gt, weights.dice_eps).pos_index;
  }
  r.terms = set_loss(up, out.refs.logits, sample.gt, r.pos_index, weights);
  return r;
}

Adam::Adam(const ParamStore& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(ParamStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  std::size_t i = 0;
  for (const auto& [name, tensor] : params.entries()) {
    Tensor p = tensor;
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_data();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      x[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::string loss_log_header() { return "step,dice,focal,ref,total"; }

std::string loss_log_line(const LossLogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", r.step, r.dice, r.focal, r.reference, r.total);
  return buf;
}

namespace {

void dump_nan_batch(const std::filesystem::path& out_dir, std::size_t step, std::size_t sample_index,
                    const AvvsSample& s, const LossTerms& terms) {
  if (out_dir.empty()) return;
  const auto dir = out_dir / "nan_dump";
  std::filesystem::create_directories(dir);
  write_tensor(dir / "video.t", s.video);
  write_tensor(dir / "audio.t", s.audio);
  write_tensor(dir / "masks.t", s.gt.masks);
  std::ofstream info(dir / "info.txt");
  info << "step " << step << "\nsample " << sample_index << "\ndice " << terms.dice << "\nfocal " << terms.focal
       << "\nreference " << terms.reference << "\ntotal " << terms.total.item() << '\n';
}

}  // namespace

TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options) {
  config.validate();
  if (data.samples.empty()) throw ValidationError("train: dataset is empty");
  for (const auto& s : data.samples) {
    if (s.video.dim(0) != config.model.frames) throw ValidationError("train: sample frame count differs from the model");
  }
  const auto& opt = config.optimizer;
  TrainResult result{CatrModel(config.model, opt.seed), {}};
  CatrModel& model = result.model;
  Adam adam(model.params(), opt.learning_rate, opt.beta1, opt.beta2, opt.eps);
  std::seed_seq seq{std::uint32_t(opt.seed), std::uint32_t(opt.seed >> 32), 0xba7cu};
  Rng sampler(seq);
  std::uniform_int_distribution<std::size_t> pick(0, data.samples.size() - 1);

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "loss.csv");
    log_file << loss_log_header() << '\n';
  }
  const double inv_batch = 1.0 / double(opt.batch_size);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    model.params().zero_grad();
    LossLogRow row;
    row.step = step;
    for (std::size_t b = 0; b < opt.batch_size; ++b) {
      const std::size_t idx = pick(sampler);
      const SampleLoss l = sample_loss(model, data.samples[idx], config.loss);
      const double total = l.terms.total.item();
      if (!std::isfinite(total)) {
        dump_nan_batch(options.out_dir, step, idx, data.samples[idx], l.terms);
        throw NumericError("non-finite loss at step " + std::to_string(step) + " on sample " + std::to_string(idx));
      }
      (l.terms.total * inv_batch).backward();
      row.dice += l.terms.dice * inv_batch;
      row.focal += l.terms.focal * inv_batch;
      row.reference += l.terms.reference * inv_batch;
      row.total += total * inv_batch;
    }
    adam.step(model.params());
    result.log.push_back(row);
    if (log_file) log_file << loss_log_line(row) << '\n';
    if (options.on_step) options.on_step(row);
    if (!options.out_dir.empty() && opt.checkpoint_every && (step + 1) % opt.checkpoint_every == 0 &&
        step + 1 < opt.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu", step + 1);
      save_checkpoint(options.out_dir / "checkpoints" / name, model, config, step + 1);
    }
  }
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "final", model, config, opt.steps);
  return result;
}

Prediction predict(const CatrModel& model, const Tensor& video, const Tensor& audio) {
  NoGradGuard no_grad;
  const ModelOutput out = model.forward(video, audio);
  const Selection sel = select_inference(out.refs.probs);
  Prediction p;
  p.query = sel.index;
  p.scores = sel.scores;
  p.masks = final_mask(out.masks.logits, sel.index, video.dim(1), video.dim(2));
  return p;
}

std::vector<Prediction> predict_all(const CatrModel& model, const Dataset& data) {
  std::vector<Prediction> out;
  out.reserve(data.samples.size());
  for (const auto& s : data.samples) out.push_back(predict(model, s.video, s.audio));
  return out;
}

EvalReport evaluate_model(const CatrModel& model, const Dataset& data) {
  std::vector<Tensor> preds, gts;
  for (const auto& p : predict_all(model, data)) preds.push_back(p.masks);
  for (const auto& s : data.samples) gts.push_back(s.gt.masks);
  return evaluate(preds, gts);
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 2) throw DimensionError("write_mask_pgm: expected [H,W], got " + shape_str(mask.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
  for (double v : mask.data()) out.put(v != 0.0 ? char(255) : char(0));
}

void write_overlay_ppm(const std::filesystem::path& path, const Tensor& frame, const Tensor& mask, double alpha) {
  if (frame.rank() != 3 || frame.dim(2) != 3 || mask.rank() != 2 || mask.dim(0) != frame.dim(0) ||
      mask.dim(1) != frame.dim(1)) {
    throw DimensionError("write_overlay_ppm: frame " + shape_str(frame.shape()) + " and mask " +
                         shape_str(mask.shape()) + " disagree");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << frame.dim(1) << ' ' << frame.dim(0) << "\n255\n";
  const auto f = frame.data();
  const auto m = mask.data();
  constexpr double tint[3] = {1.0, 0.0, 0.0};
  for (std::size_t p = 0; p < m.size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = std::clamp(f[p * 3 + c], 0.0, 1.0);
      if (m[p] != 0.0) v = (1.0 - alpha) * v + alpha * tint[c];
      out.put(char(std::lround(v * 255.0)));
    }
  }
}

}  // namespace catr
