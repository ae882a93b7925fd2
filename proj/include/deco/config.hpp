#pragma once

// Flat `key = value` run configuration shared by the trainer and the CLI.

#include "deco/losses.hpp"
#include "deco/optim.hpp"
#include "deco/video_io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deco {

enum class Schedule {
  two_phase,     // freeze motion net, then freeze the keyframe encoder
  single_phase,  // everything trainable after the motion warm-up
};

struct TrainConfig {
  std::uint64_t seed = 1;

  // Data.
  Index frames = 8;
  Index height = 32;
  Index width = 32;
  Index batch = 4;
  Index train_clips = 64;
  Index heldout_clips = 8;
  Regime regime = Regime::translate;
  std::string data_dir;  // DCVR clips written by gen-data; generated in memory when empty

  // Schedule. Full-scale reference: 400000 + 100000 steps, adversarial from 400000.
  std::int64_t phase0_steps = 500;
  std::int64_t phase1_steps = 1500;
  std::int64_t phase2_steps = 500;
  Schedule schedule = Schedule::two_phase;
  std::int64_t adv_start_step = -1;  // -1: 80% of the way through phases 1 and 2

  AdamConfig adam{};
  double motion_lr = 1e-3;
  double clip_norm = 1.0;
  LossWeights weights{};

  // Model.
  VaeConfig vae{};
  Index motion_width = 32;
  std::uint64_t perceptual_seed = 1234;

  // Outputs.
  std::string log_path;
  std::string checkpoint_path;
  std::int64_t checkpoint_every = 0;

  // CLI inputs.
  std::string out_dir = "data";
  std::string input;
  std::string output;
  std::string ppm_dir;
  std::string reference;
  std::string candidate;
  std::string ablation = "layout";  // layout: concat vs dedicated; schedule: two-phase vs single-phase
  Index ablation_seeds = 3;

  std::int64_t total_steps() const { return phase0_steps + phase1_steps + phase2_steps; }
  std::int64_t resolved_adv_start() const;
  void validate() const;
};

/// Applies one `key=value` assignment; unknown keys and bad values throw.
void apply_setting(TrainConfig& cfg, const std::string& assignment);

/// Parses config text: one assignment per line, `#` comments, blank lines.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

std::vector<std::string> config_keys();
std::string to_config_text(const TrainConfig& cfg);

}  // namespace deco
