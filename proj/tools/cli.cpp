#include "cli.hpp"

#include "deco/gradcheck_suite.hpp"
#include "deco/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace deco {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> settings;
};

TrainConfig resolve(const Common& c) {
  TrainConfig cfg = c.config_path.empty() ? TrainConfig{} : load_config(c.config_path);
  for (const auto& s : c.settings) apply_setting(cfg, s);
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ValidationError(std::string("missing setting: ") + key);
}

TensorF clamp01(const TensorF& x) { return clamp(x, 0.0f, 1.0f); }

Trainer trainer_from_checkpoint(const TrainConfig& cfg) {
  Trainer t(cfg, Dataset{{TensorF::zeros({3, cfg.frames, cfg.height, cfg.width})},
                         {TensorF::zeros({3, cfg.frames, cfg.height, cfg.width})}});
  if (!cfg.checkpoint_path.empty()) t.restore(load_checkpoint(cfg.checkpoint_path));
  return t;
}

TrainConfig config_for_clip(TrainConfig cfg, const TensorF& clip) {
  cfg.frames = clip.dim(1);
  cfg.height = clip.dim(2);
  cfg.width = clip.dim(3);
  cfg.validate();
  return cfg;
}

int cmd_gen_data(const TrainConfig& cfg) {
  write_dataset(cfg, cfg.out_dir);
  std::printf("wrote %lld train and %lld held-out clips to %s\n", static_cast<long long>(cfg.train_clips),
              static_cast<long long>(cfg.heldout_clips), cfg.out_dir.c_str());
  return kExitOk;
}

std::ofstream open_log(const TrainConfig& cfg) {
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw RuntimeAbort("cannot open log " + cfg.log_path);
  }
  return log;
}

int cmd_pretrain_motion(TrainConfig cfg) {
  cfg.phase1_steps = cfg.phase2_steps = 0;
  Trainer t(cfg);
  std::ofstream log = open_log(cfg);
  t.run(-1, log.is_open() ? static_cast<std::ostream*>(&log) : &std::cout);
  if (!cfg.checkpoint_path.empty()) save_checkpoint(t.to_checkpoint(), cfg.checkpoint_path);
  NoGradGuard guard;
  const TensorF heldout = stack_clips(t.data().heldout);
  std::printf("held-out warp L1 %.6f (keyframe copy %.6f)\n", static_cast<double>(warp_l1(t.motion(), heldout).item()),
              copy_keyframe_l1(heldout));
  return kExitOk;
}

int cmd_train(const TrainConfig& cfg) {
  Trainer t(cfg);
  if (!cfg.input.empty()) t.restore(load_checkpoint(cfg.input));
  std::ofstream log = open_log(cfg);
  t.run(-1, log.is_open() ? static_cast<std::ostream*>(&log) : &std::cout);
  if (!cfg.checkpoint_path.empty()) save_checkpoint(t.to_checkpoint(), cfg.checkpoint_path);
  std::cout << t.evaluate_heldout().to_json() << '\n';
  return kExitOk;
}

int cmd_reconstruct(const TrainConfig& base) {
  require(base.input, "input");
  require(base.output, "output");
  const TensorF clip = load_video(base.input).frames;
  const Trainer t = trainer_from_checkpoint(config_for_clip(base, clip));
  const TensorF video = clamp01(reshape(t.reconstruct(as_batch(clip)).video, clip.shape()));
  save_video({video}, base.output);
  if (!base.ppm_dir.empty()) dump_ppm(video, base.ppm_dir, PpmMapping::unsigned_unit, "frame");
  std::printf("psnr %.4f ssim %.4f\n", psnr(video, clip), ssim(video, clip));
  return kExitOk;
}

int cmd_decouple(const TrainConfig& base) {
  require(base.input, "input");
  require(base.ppm_dir, "ppm_dir");
  const TensorF clip = load_video(base.input).frames;
  const Trainer t = trainer_from_checkpoint(config_for_clip(base, clip));
  NoGradGuard guard;
  const DecoupledComponents<float> c = decouple(as_batch(clip), t.motion());
  const Index T = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  dump_ppm(reshape(c.keyframe, {3, 1, H, W}), base.ppm_dir, PpmMapping::unsigned_unit, "keyframe");
  dump_ppm(reshape(c.motion, {3, T, H, W}), base.ppm_dir, PpmMapping::signed_gray, "motion");
  dump_ppm(reshape(c.residual, {3, T, H, W}), base.ppm_dir, PpmMapping::signed_gray, "residual");
  std::printf("wrote keyframe, motion and residual frames to %s\n", base.ppm_dir.c_str());
  return kExitOk;
}

int cmd_eval(const TrainConfig& cfg) {
  MetricReport report;
  if (!cfg.reference.empty() || !cfg.candidate.empty()) {
    require(cfg.reference, "reference");
    require(cfg.candidate, "candidate");
    const TensorF ref = load_video(cfg.reference).frames;
    const TensorF cand = load_video(cfg.candidate).frames;
    report.psnr = psnr(cand, ref);
    report.ssim = ssim(cand, ref);
  } else {
    require(cfg.checkpoint_path, "checkpoint_path (or reference and candidate)");
    Trainer t(cfg);
    t.restore(load_checkpoint(cfg.checkpoint_path));
    report = t.evaluate_heldout();
  }
  std::cout << report.to_json() << '\n';
  return kExitOk;
}

int cmd_ablation(const TrainConfig& cfg) {
  for (const auto& r : run_ablation(cfg, &std::cerr)) {
    nlohmann::ordered_json j;
    j["seed"] = r.seed;
    j[r.variant_a] = nlohmann::ordered_json::parse(r.a.to_json());
    j[r.variant_b] = nlohmann::ordered_json::parse(r.b.to_json());
    std::cout << j.dump() << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const TrainConfig& cfg) {
  bool ok = true;
  const std::vector<std::uint64_t> seeds{cfg.seed, cfg.seed + 1, cfg.seed + 2};
  for (const auto& r : run_gradcheck_suite(seeds)) {
    const bool pass = r.passed();
    ok = ok && pass;
    std::printf("%-26s max_rel_error %.3e %s\n", r.op.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Decoupled video VAE: data generation, training, reconstruction and evaluation", "deco"};
  app.require_subcommand(1);
  Common common;
  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const TrainConfig&);
  };
  const Sub subs[] = {
      {"gen-data", "write the synthetic dataset as DCVR clips", cmd_gen_data},
      {"pretrain-motion", "run the photometric motion warm-up", [](const TrainConfig& c) { return cmd_pretrain_motion(c); }},
      {"train", "run the staged training schedule", cmd_train},
      {"reconstruct", "reconstruct a DCVR clip through a checkpoint", cmd_reconstruct},
      {"decouple", "dump keyframe, motion and residual frames as PPM", cmd_decouple},
      {"eval", "print PSNR, SSIM and latent statistics as one JSON line", cmd_eval},
      {"ablation", "train two variants under one budget and report both", cmd_ablation},
      {"gradcheck", "finite-difference check of every registered op", cmd_gradcheck},
  };
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", common.config_path, "config file of key = value lines");
    sub->add_option("-s,--set", common.settings, "override one setting, key=value")->take_all();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitValidation;
  }
  try {
    for (const auto& s : subs)
      if (app.got_subcommand(s.name)) return s.run(resolve(common));
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "abort: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace deco
