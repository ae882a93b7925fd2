#pragma once

// Staged trainer: motion warm-up, then the two freeze phases.

#include "deco/checkpoint.hpp"
#include "deco/config.hpp"
#include "deco/metrics.hpp"
#include "deco/motion_train.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace deco {

inline const std::vector<std::string>& generator_groups() {
  static const std::vector<std::string> g{"motion_net", "encoder_k", "encoder_m", "encoder_r", "encoder_concat", "decoder"};
  return g;
}

/// Step counts and freeze sets of phases 0, 1 and 2.
struct PhasePlan {
  std::array<std::int64_t, 3> steps{};
  std::array<std::set<std::string>, 3> frozen;

  static PhasePlan from_config(const TrainConfig& cfg);

  std::int64_t total() const { return steps[0] + steps[1] + steps[2]; }
  /// Phase that runs global step `step` (0-based); `total()` maps to the last phase.
  int phase_at(std::int64_t step) const;
};

struct StepRecord {
  std::int64_t step = 0;
  int phase = 0;
  double total = 0, recon = 0, kl = 0, perceptual = 0, adv = 0, psnr = 0;

  /// "step phase loss_total loss_recon loss_kl loss_p loss_adv psnr"
  std::string line() const;
};

struct Dataset {
  std::vector<TensorF> train;
  std::vector<TensorF> heldout;
};

/// Seed of clip `index` in the training or held-out split.
std::uint64_t clip_seed(std::uint64_t seed, Index index, bool heldout);

/// Synthetic clips for a config, or the DCVR files under `data_dir` when set.
Dataset make_dataset(const TrainConfig& cfg);

/// Writes the synthetic dataset as train_NNNN.dcvr and heldout_NNNN.dcvr.
void write_dataset(const TrainConfig& cfg, const std::filesystem::path& dir);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const TrainConfig& cfg, Dataset data);

  const TrainConfig& config() const { return cfg_; }
  const PhasePlan& plan() const { return plan_; }
  ParameterStore<float>& params() { return store_; }
  const ParameterStore<float>& params() const { return store_; }
  const MotionNet<float>& motion() const { return motion_; }
  const DecoVae<float>& vae() const { return vae_; }
  const Dataset& data() const { return data_; }

  std::int64_t global_step() const { return step_; }
  bool finished() const { return step_ >= plan_.total(); }

  /// Runs one global step of whichever phase it belongs to.
  StepRecord step();

  /// Steps until `end` (clamped to the plan) and returns the records. Each
  /// record is appended to `log` when given; checkpoints every
  /// `checkpoint_every` steps when a checkpoint path is configured.
  std::vector<StepRecord> run(std::int64_t end = -1, std::ostream* log = nullptr);

  /// Inference-mode forward of a [N,3,T,H,W] batch.
  VaeOutput<float> reconstruct(const TensorF& batch) const;

  /// Mean per-clip PSNR, mean SSIM and latent statistics over `clips`.
  MetricReport evaluate(const std::vector<TensorF>& clips) const;
  MetricReport evaluate_heldout() const { return evaluate(data_.heldout); }

  Checkpoint to_checkpoint() const;
  /// Restores parameters, optimizer moments, rng and step. Missing, unknown
  /// or reshaped arrays are rejected with every offender listed.
  void restore(const Checkpoint& ckpt);

 private:
  void set_trainable(const std::set<std::string>& groups);
  StepRecord warmup_step();
  StepRecord generator_step(int phase);
  [[noreturn]] void abort_non_finite(const std::string& what);

  TrainConfig cfg_;
  PhasePlan plan_;
  Dataset data_;
  ParameterStore<float> store_;
  Rng init_rng_;
  MotionNet<float> motion_;
  DecoVae<float> vae_;
  Discriminator<float> disc_;
  FeatureNet<float> features_;
  OptimizerState warmup_opt_;
  OptimizerState gen_opt_;
  OptimizerState disc_opt_;
  Rng rng_;
  std::int64_t step_ = 0;
};

/// Held-out reports of two variants trained under one budget.
struct AblationResult {
  std::string variant_a, variant_b;
  std::uint64_t seed = 0;
  MetricReport a, b;
};

/// `cfg.ablation == "layout"`: (a) concat single encoder vs (b) dedicated
/// encoders, both single-phase. `"schedule"`: (a) single-phase vs (b)
/// two-phase, dedicated encoders. One result per seed starting at cfg.seed.
std::vector<AblationResult> run_ablation(const TrainConfig& cfg, std::ostream* progress = nullptr);

}  // namespace deco
