#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "catr/checkpoint.hpp"
#include "catr/config.hpp"
#include "catr/gradcheck.hpp"
#include "catr/perf.hpp"
#include "catr/synth.hpp"
#include "catr/train.hpp"

namespace fs = std::filesystem;
using namespace catr;

namespace {

int cmd_gen_data(const fs::path& out, std::size_t n, std::uint64_t seed, const SceneOptions& opt) {
  const Dataset d = generate_dataset(n, seed, opt);
  write_dataset(d, out);
  std::cout << "wrote " << d.samples.size() << " samples to " << out.string() << '\n';
  return 0;
}

int cmd_train(RunConfig config, const fs::path& out) {
  apply_env_overrides(config);
  config.validate();
  if (config.data.train_dir.empty()) throw ConfigError("no training data: set data.train_dir or pass --data");
  const Dataset data = read_dataset(config.data.train_dir);
  TrainOptions opt;
  opt.out_dir = out;
  const std::size_t every = std::max<std::size_t>(1, config.optimizer.steps / 20);
  opt.on_step = [&](const LossLogRow& r) {
    if (r.step % every == 0 || r.step + 1 == config.optimizer.steps) std::cout << loss_log_line(r) << std::endl;
  };
  train(config, data, opt);
  std::cout << "checkpoint: " << (out / "final").string() << '\n';
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report) {
  const LoadedCheckpoint c = load_checkpoint(ckpt);
  const EvalReport r = evaluate_model(c.model, read_dataset(data_dir));
  if (!report.empty()) {
    std::ofstream out(report);
    if (!out) throw FormatError("cannot write " + report.string());
    out << r.to_json() << '\n';
  }
  std::printf("M_J %.4f  M_F %.4f  over %zu videos\n", r.mean_j, r.mean_f, r.videos.size());
  return 0;
}

int cmd_infer(const fs::path& ckpt, const fs::path& data_dir, std::size_t index, const fs::path& out) {
  const LoadedCheckpoint c = load_checkpoint(ckpt);
  const Dataset d = read_dataset(data_dir);
  if (index >= d.samples.size()) {
    throw ValidationError("sample " + std::to_string(index) + " out of range (" + std::to_string(d.samples.size()) + ")");
  }
  const AvvsSample& s = d.samples[index];
  const Prediction p = predict(c.model, s.video, s.audio);
  fs::create_directories(out);
  const std::size_t T = p.masks.dim(0), H = p.masks.dim(1), W = p.masks.dim(2);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor mask = reshape(slice(p.masks, 0, t, t + 1), {H, W});
    const Tensor frame = reshape(slice(s.video, 0, t, t + 1), {H, W, 3});
    char name[32];
    std::snprintf(name, sizeof name, "mask_%02zu.pgm", t);
    write_mask_pgm(out / name, mask);
    std::snprintf(name, sizeof name, "overlay_%02zu.ppm", t);
    write_overlay_ppm(out / name, frame, mask);
  }
  std::cout << "query " << p.query << ", wrote " << T << " masks and overlays to " << out.string() << '\n';
  return 0;
}

int cmd_gradcheck(double eps, double tol) {
  bool ok = true;
  for (const auto& e : gradcheck_all(eps, tol)) {
    std::printf("%-24s %.3e %s\n", e.name.c_str(), e.error, e.passed ? "ok" : "FAIL");
    ok = ok && e.passed;
  }
  return ok ? 0 : 2;
}

int cmd_bench(std::size_t T, std::size_t h, std::size_t w, std::size_t C, std::size_t heads, bool measure,
              const fs::path& csv) {
  AttnCostReport r = analytic_costs(T, h, w);
  r.channels = C;
  r.heads = heads;
  if (measure) {
    try {
      r.measured_joint = measure_peak(AttnVariant::Joint, T, h, w, C, heads);
    } catch (const ResourceError& e) {
      std::cerr << "joint measurement skipped: " << e.what() << '\n';
    }
    r.measured_decoupled = measure_peak(AttnVariant::Decoupled, T, h, w, C, heads);
  }
  const std::string header = cost_csv_header(), row = cost_csv_row(r);
  std::cout << header << '\n' << row << '\n';
  std::cout << "single attention over P+T tokens: " << r.literal << " score entries\n";
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw FormatError("cannot write " + csv.string());
    out << header << '\n' << row << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual segmentation at desk scale"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  std::size_t gen_n = 200;
  std::uint64_t gen_seed = 7;
  SceneOptions scene;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Number of videos");
  gen->add_option("--seed", gen_seed, "Base seed");
  gen->add_option("--multi-source", scene.multi_source, "Probability of a second sounding shape");
  gen->add_option("--silent", scene.silent, "Probability of a silent frame");
  gen->add_option("--sigma", scene.sigma, "Noise level");
  gen->add_option("--frames", scene.frames, "Frames per video");
  gen->add_option("--height", scene.height, "Frame height");
  gen->add_option("--width", scene.width, "Frame width");
  auto* gen_min_size = gen->add_option("--min-size", scene.min_size, "Smallest shape size in pixels");
  auto* gen_max_size = gen->add_option("--max-size", scene.max_size, "Largest shape size in pixels");
  auto* gen_gap = gen->add_option("--min-gap", scene.min_gap, "Minimum gap between shape outlines");

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_preset = "desk", tr_data, tr_out = "run";
  std::size_t tr_steps = 0;
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--preset", tr_preset, "desk or published (when no --config)");
  tr->add_option("--data", tr_data, "Training dataset directory (overrides data.train_dir)");
  tr->add_option("--steps", tr_steps, "Override optimizer.steps");
  tr->add_option("--out", tr_out, "Output directory");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_report;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory or manifest")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--report", ev_report, "JSON report path");

  auto* inf = app.add_subcommand("infer", "Write masks and overlays for one sample");
  std::string inf_ckpt, inf_data, inf_out = "infer";
  std::size_t inf_index = 0;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint directory or manifest")->required();
  inf->add_option("--data", inf_data, "Dataset directory")->required();
  inf->add_option("--sample", inf_index, "Sample index");
  inf->add_option("--out", inf_out, "Output directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  double gc_eps = 1e-5, gc_tol = 1e-4;
  gc->add_option("--eps", gc_eps, "Perturbation");
  gc->add_option("--tol", gc_tol, "Maximum relative error");

  auto* bench = app.add_subcommand("bench-attn", "Joint vs decoupled attention cost");
  bench->set_help_flag("--help", "Print this help message and exit");
  std::size_t b_T = 5, b_h = 16, b_w = 16, b_C = 32, b_heads = 4;
  bool b_no_measure = false;
  std::string b_csv;
  bench->add_option("--T", b_T, "Frames");
  bench->add_option("--h", b_h, "Grid height");
  bench->add_option("--w", b_w, "Grid width");
  bench->add_option("--C", b_C, "Channels");
  bench->add_option("--heads", b_heads, "Attention heads");
  bench->add_flag("--no-measure", b_no_measure, "Analytic counts only");
  bench->add_option("--csv", b_csv, "CSV output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      // Size and gap defaults are tuned for 64x64 frames; scale them with the canvas unless given.
      const double k = double(std::min(scene.height, scene.width)) / 64.0;
      if (gen_min_size->count() == 0) scene.min_size *= k;
      if (gen_max_size->count() == 0) scene.max_size *= k;
      if (gen_gap->count() == 0) scene.min_gap *= k;
      return cmd_gen_data(gen_out, gen_n, gen_seed, scene);
    }
    if (*tr) {
      RunConfig c = tr_config.empty() ? preset(tr_preset) : load_config(tr_config);
      if (!tr_data.empty()) c.data.train_dir = tr_data;
      if (tr_steps) c.optimizer.steps = tr_steps;
      return cmd_train(c, tr_out);
    }
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_report);
    if (*inf) return cmd_infer(inf_ckpt, inf_data, inf_index, inf_out);
    if (*gc) return cmd_gradcheck(gc_eps, gc_tol);
    if (*bench) return cmd_bench(b_T, b_h, b_w, b_C, b_heads, !b_no_measure, b_csv);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
