#include "deco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

namespace deco {
namespace {

constexpr const char* kWarmupSuffix = ".warmup_adam";
constexpr const char* kAdamSuffix = ".adam";

// splitmix64 finaliser
std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::vector<ParameterStore<float>::Entry> group_entries(const ParameterStore<float>& store,
                                                        const std::set<std::string>& groups) {
  std::vector<ParameterStore<float>::Entry> out;
  for (const auto& e : store.entries())
    if (groups.count(e.group)) out.push_back(e);
  return out;
}

std::vector<TensorF> load_split(const std::filesystem::path& dir, const std::string& prefix) {
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    const std::string name = f.path().filename().string();
    if (name.rfind(prefix + "_", 0) == 0 && f.path().extension() == ".dcvr") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TensorF> out;
  for (const auto& f : files) out.push_back(load_video(f).frames);
  return out;
}

void store_optimizer(Checkpoint& c, const OptimizerState& opt, const std::string& suffix) {
  for (const auto& [name, mom] : opt.moments) {
    const Shape shape{mom.m.size()};
    c.arrays.push_back({name + suffix + "_m", shape, std::vector<float>(mom.m.data(), mom.m.data() + mom.m.size())});
    c.arrays.push_back({name + suffix + "_v", shape, std::vector<float>(mom.v.data(), mom.v.data() + mom.v.size())});
    c.counters.emplace_back(name + suffix + "_t", mom.steps);
  }
}

}  // namespace

PhasePlan PhasePlan::from_config(const TrainConfig& cfg) {
  PhasePlan p;
  p.steps = {cfg.phase0_steps, cfg.phase1_steps, cfg.phase2_steps};
  for (const auto& g : generator_groups())
    if (g != MotionNet<float>::kGroup) p.frozen[0].insert(g);
  p.frozen[0].insert(Discriminator<float>::kGroup);
  if (cfg.schedule == Schedule::two_phase) {
    p.frozen[1] = {MotionNet<float>::kGroup};
    p.frozen[2] = {"encoder_k"};
  }
  return p;
}

int PhasePlan::phase_at(std::int64_t step) const {
  if (step < steps[0]) return 0;
  if (step < steps[0] + steps[1]) return 1;
  if (step < total() || steps[2] > 0) return 2;
  return steps[1] > 0 ? 1 : 0;
}

std::string StepRecord::line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld %d %.9g %.9g %.9g %.9g %.9g %.9g", static_cast<long long>(step), phase, total,
                recon, kl, perceptual, adv, psnr);
  return buf;
}

std::uint64_t clip_seed(std::uint64_t seed, Index index, bool heldout) {
  return mix(mix(seed) ^ (static_cast<std::uint64_t>(index) << 1 | (heldout ? 1u : 0u)));
}

Dataset make_dataset(const TrainConfig& cfg) {
  Dataset d;
  if (!cfg.data_dir.empty()) {
    if (!std::filesystem::is_directory(cfg.data_dir)) throw ValidationError("data_dir not found: " + cfg.data_dir);
    d.train = load_split(cfg.data_dir, "train");
    d.heldout = load_split(cfg.data_dir, "heldout");
    if (d.train.empty() || d.heldout.empty())
      throw ValidationError("data_dir " + cfg.data_dir + " needs train_*.dcvr and heldout_*.dcvr files");
    const Shape want{3, cfg.frames, cfg.height, cfg.width};
    for (const auto* split : {&d.train, &d.heldout})
      for (const auto& c : *split)
        if (c.shape() != want)
          throw ValidationError("data_dir clip " + shape_str(c.shape()) + " does not match config " + shape_str(want));
    return d;
  }
  for (Index i = 0; i < cfg.train_clips; ++i)
    d.train.push_back(gen_synthetic(clip_seed(cfg.seed, i, false), cfg.frames, cfg.height, cfg.width, cfg.regime).video.frames);
  for (Index i = 0; i < cfg.heldout_clips; ++i)
    d.heldout.push_back(gen_synthetic(clip_seed(cfg.seed, i, true), cfg.frames, cfg.height, cfg.width, cfg.regime).video.frames);
  return d;
}

void write_dataset(const TrainConfig& cfg, const std::filesystem::path& dir) {
  TrainConfig c = cfg;
  c.data_dir.clear();
  const Dataset d = make_dataset(c);
  std::filesystem::create_directories(dir);
  char name[64];
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    std::snprintf(name, sizeof name, "train_%04zu.dcvr", i);
    save_video({d.train[i]}, dir / name);
  }
  for (std::size_t i = 0; i < d.heldout.size(); ++i) {
    std::snprintf(name, sizeof name, "heldout_%04zu.dcvr", i);
    save_video({d.heldout[i]}, dir / name);
  }
}

Trainer::Trainer(const TrainConfig& cfg) : Trainer(cfg, (cfg.validate(), make_dataset(cfg))) {}

Trainer::Trainer(const TrainConfig& cfg, Dataset data)
    : cfg_((cfg.validate(), cfg)),
      plan_(PhasePlan::from_config(cfg)),
      data_(std::move(data)),
      init_rng_(mix(cfg.seed)),
      motion_(store_, init_rng_, MotionNetConfig{cfg.motion_width}),
      vae_(store_, cfg.vae, init_rng_),
      disc_(store_, init_rng_),
      features_(cfg.perceptual_seed),
      warmup_opt_{AdamConfig{cfg.motion_lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps}, {}},
      gen_opt_{cfg.adam, {}},
      disc_opt_{cfg.adam, {}},
      rng_(mix(cfg.seed ^ 0x5DEECE66Dull)) {
  cfg_.weights.adv_start_step = cfg_.resolved_adv_start();
  if (data_.train.empty() || data_.heldout.empty()) throw ValidationError("trainer: empty dataset split");
}

void Trainer::set_trainable(const std::set<std::string>& groups) {
  for (const auto& g : store_.groups()) store_.set_group_trainable(g, groups.count(g) > 0);
}

StepRecord Trainer::step() {
  if (finished()) throw ValidationError("trainer: plan already complete");
  const int phase = plan_.phase_at(step_);
  StepRecord r = phase == 0 ? warmup_step() : generator_step(phase);
  ++step_;
  return r;
}

StepRecord Trainer::warmup_step() {
  set_trainable({MotionNet<float>::kGroup});
  const TensorF batch = sample_batch(data_.train, cfg_.batch, rng_);
  const TensorF keyframe = first_frame(batch);
  const TensorF predicted = warp(build_pyramid(keyframe), motion_(batch, keyframe));
  const TensorF loss = l1(predicted, batch);
  StepRecord r{step_, 0};
  r.total = r.recon = loss.item();
  if (!std::isfinite(r.total)) abort_non_finite("warm-up loss");
  r.psnr = psnr(predicted.detach(), batch);
  store_.zero_grad();
  loss.backward();
  auto entries = group_entries(store_, {MotionNet<float>::kGroup});
  clip_grad_norm(entries, cfg_.clip_norm);
  adam_step(store_, warmup_opt_, {}, {MotionNet<float>::kGroup});
  return r;
}

StepRecord Trainer::generator_step(int phase) {
  const auto& frozen = plan_.frozen[static_cast<std::size_t>(phase)];
  std::set<std::string> trainable;
  for (const auto& g : generator_groups())
    if (!frozen.count(g)) trainable.insert(g);
  set_trainable(trainable);

  const TensorF batch = sample_batch(data_.train, cfg_.batch, rng_);
  const DecoupledComponents<float> comps = decouple(batch, motion_);
  const VaeOutput<float> out = vae_.forward(comps, rng_, ForwardMode::train);

  LossParts<float> parts;
  std::optional<ComponentPair<float>> aux;
  if (cfg_.weights.aux_components) aux = ComponentPair<float>{out.motion, comps.motion, out.residual, comps.residual};
  parts.recon = recon_loss(out.video, batch, aux);
  parts.kl = kl_loss(out.latents);
  parts.perceptual = perceptual_loss(out.video, batch, features_);
  const bool adversarial = adversarial_active(cfg_.weights, step_);
  if (adversarial) parts.adv = generator_adv_loss(disc_, out.video);
  const TensorF total = total_loss(parts, cfg_.weights, step_);

  StepRecord r{step_, phase};
  r.total = total.item();
  r.recon = parts.recon.item();
  r.kl = parts.kl.item();
  r.perceptual = parts.perceptual.item();
  r.adv = adversarial ? static_cast<double>(parts.adv.item()) : 0.0;
  r.psnr = psnr(out.video.detach(), batch);
  if (!std::isfinite(r.total)) abort_non_finite("total loss");

  store_.zero_grad();
  total.backward();
  auto entries = group_entries(store_, trainable);
  clip_grad_norm(entries, cfg_.clip_norm);
  std::set<std::string> skip = frozen;
  skip.insert(Discriminator<float>::kGroup);
  adam_step(store_, gen_opt_, skip);

  if (adversarial) {
    set_trainable({Discriminator<float>::kGroup});
    const TensorF d_loss = discriminator_loss(disc_, batch, out.video);
    if (!std::isfinite(d_loss.item())) abort_non_finite("discriminator loss");
    store_.zero_grad();
    d_loss.backward();
    auto d_entries = group_entries(store_, {Discriminator<float>::kGroup});
    clip_grad_norm(d_entries, cfg_.clip_norm);
    adam_step(store_, disc_opt_, {}, {Discriminator<float>::kGroup});
  }
  return r;
}

void Trainer::abort_non_finite(const std::string& what) {
  const std::filesystem::path path =
      cfg_.checkpoint_path.empty() ? std::filesystem::path("crash.dcpt") : std::filesystem::path(cfg_.checkpoint_path + ".crash");
  std::string note;
  try {
    save_checkpoint(to_checkpoint(), path);
    note = "; crash checkpoint written to " + path.string();
  } catch (const std::exception& e) {
    note = std::string("; crash checkpoint failed: ") + e.what();
  }
  throw RuntimeAbort("non-finite " + what + " at step " + std::to_string(step_) + note);
}

std::vector<StepRecord> Trainer::run(std::int64_t end, std::ostream* log) {
  if (end < 0 || end > plan_.total()) end = plan_.total();
  std::vector<StepRecord> records;
  while (step_ < end) {
    records.push_back(step());
    if (log) *log << records.back().line() << '\n' << std::flush;
    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() && step_ % cfg_.checkpoint_every == 0)
      save_checkpoint(to_checkpoint(), cfg_.checkpoint_path);
  }
  return records;
}

VaeOutput<float> Trainer::reconstruct(const TensorF& batch) const {
  NoGradGuard guard;
  Rng unused(0);
  return vae_.forward(decouple(batch, motion_), unused, ForwardMode::inference);
}

MetricReport Trainer::evaluate(const std::vector<TensorF>& clips) const {
  if (clips.empty()) throw ValidationError("evaluate: no clips");
  NoGradGuard guard;
  MetricReport report;
  const char* names[] = {"keyframe", "motion", "residual"};
  std::vector<std::vector<Eigen::VectorXd>> samples;
  for (const auto& clip : clips) {
    const VaeOutput<float> out = reconstruct(as_batch(clip));
    const TensorF video = reshape(out.video, clip.shape());
    report.psnr += psnr(video, clip);
    report.ssim += ssim(video, clip);
    samples.resize(out.latents.size());
    for (std::size_t i = 0; i < out.latents.size(); ++i)
      samples[i].push_back(out.latents[i].mu.values().cast<double>());
  }
  report.psnr /= static_cast<double>(clips.size());
  report.ssim /= static_cast<double>(clips.size());
  if (clips.size() >= 2)
    for (std::size_t i = 0; i < samples.size(); ++i)
      report.latents.push_back(latent_stats(samples.size() == 1 ? "concat" : names[i], samples[i]));
  return report;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint c;
  c.global_step = static_cast<std::uint64_t>(step_);
  c.phase = static_cast<std::uint32_t>(plan_.phase_at(step_));
  c.rng_state = rng_.state();
  for (const auto& e : store_.entries()) {
    const auto& v = e.tensor.values();
    c.arrays.push_back({e.name, e.tensor.shape(), std::vector<float>(v.data(), v.data() + v.size())});
  }
  store_optimizer(c, warmup_opt_, kWarmupSuffix);
  // Generator and discriminator parameters are disjoint, so they share a suffix.
  store_optimizer(c, gen_opt_, kAdamSuffix);
  store_optimizer(c, disc_opt_, kAdamSuffix);
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  std::vector<std::string> offenders;
  std::map<std::string, const NamedArray*> arrays;
  for (const auto& a : ckpt.arrays) arrays[a.name] = &a;
  for (const auto& e : store_.entries()) {
    auto it = arrays.find(e.name);
    if (it == arrays.end()) offenders.push_back("missing " + e.name);
    else if (it->second->shape != e.tensor.shape())
      offenders.push_back(e.name + " has shape " + shape_str(it->second->shape) + ", expected " + shape_str(e.tensor.shape()));
  }

  // Optimizer arrays are "<param><suffix>_m" / "_v" with a "_t" counter.
  std::map<std::string, std::pair<std::string, std::string>> moment_owner;  // array name -> (param, suffix)
  for (const auto& e : store_.entries())
    for (const char* suffix : {kWarmupSuffix, kAdamSuffix}) {
      moment_owner[e.name + suffix + "_m"] = {e.name, suffix};
      moment_owner[e.name + suffix + "_v"] = {e.name, suffix};
    }
  for (const auto& a : ckpt.arrays) {
    if (store_.find(a.name)) continue;
    auto it = moment_owner.find(a.name);
    if (it == moment_owner.end()) offenders.push_back("unknown " + a.name);
    else if (a.shape != Shape{store_.find(it->second.first)->tensor.size()})
      offenders.push_back(a.name + " has shape " + shape_str(a.shape));
  }
  if (!offenders.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw ValidationError(msg);
  }
  if (ckpt.global_step > static_cast<std::uint64_t>(plan_.total()))
    throw ValidationError("checkpoint step " + std::to_string(ckpt.global_step) + " is past the configured plan");

  for (const auto& e : store_.entries()) {
    TensorF t = e.tensor;
    const auto& src = arrays.at(e.name)->data;
    t.mutable_values() = Eigen::Map<const TensorF::Vector>(src.data(), static_cast<Index>(src.size()));
  }
  std::map<std::string, std::uint64_t> counters(ckpt.counters.begin(), ckpt.counters.end());
  auto load_opt = [&](OptimizerState& opt, const std::string& suffix, bool discriminator) {
    opt.moments.clear();
    for (const auto& e : store_.entries()) {
      if (suffix == kAdamSuffix && (e.group == Discriminator<float>::kGroup) != discriminator) continue;
      auto m = arrays.find(e.name + suffix + "_m");
      auto v = arrays.find(e.name + suffix + "_v");
      auto t = counters.find(e.name + suffix + "_t");
      if (m == arrays.end() || v == arrays.end() || t == counters.end()) continue;
      AdamMoments mom;
      mom.m = Eigen::Map<const TensorF::Vector>(m->second->data.data(), e.tensor.size());
      mom.v = Eigen::Map<const TensorF::Vector>(v->second->data.data(), e.tensor.size());
      mom.steps = t->second;
      opt.moments[e.name] = std::move(mom);
    }
  };
  load_opt(warmup_opt_, kWarmupSuffix, false);
  load_opt(gen_opt_, kAdamSuffix, false);
  load_opt(disc_opt_, kAdamSuffix, true);
  rng_.set_state(ckpt.rng_state);
  step_ = static_cast<std::int64_t>(ckpt.global_step);
}

std::vector<AblationResult> run_ablation(const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  std::vector<AblationResult> results;
  for (Index s = 0; s < cfg.ablation_seeds; ++s) {
    TrainConfig a = cfg, b = cfg;
    a.seed = b.seed = cfg.seed + static_cast<std::uint64_t>(s);
    a.checkpoint_path.clear();
    b.checkpoint_path.clear();
    AblationResult r;
    r.seed = a.seed;
    if (cfg.ablation == "layout") {
      a.schedule = b.schedule = Schedule::single_phase;
      a.vae.layout = EncoderLayout::concat;
      b.vae.layout = EncoderLayout::dedicated;
      r.variant_a = "concat";
      r.variant_b = "dedicated";
    } else {
      a.vae.layout = b.vae.layout = EncoderLayout::dedicated;
      a.schedule = Schedule::single_phase;
      b.schedule = Schedule::two_phase;
      r.variant_a = "single-phase";
      r.variant_b = "two-phase";
    }
    if (a.total_steps() != b.total_steps() || a.batch != b.batch) throw ValidationError("ablation: budget mismatch");
    const Dataset data = make_dataset(a);
    for (auto* variant : {&a, &b}) {
      Trainer t(*variant, data);
      t.run();
      (variant == &a ? r.a : r.b) = t.evaluate_heldout();
      if (progress)
        *progress << "seed " << r.seed << ' ' << (variant == &a ? r.variant_a : r.variant_b) << " psnr "
                  << (variant == &a ? r.a : r.b).psnr << '\n';
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace deco
