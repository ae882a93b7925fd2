#include "deco/trainer.hpp"

#include <doctest.h>

#include <map>
#include <sstream>

using namespace deco;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.frames = 4;
  cfg.height = 16;
  cfg.width = 16;
  cfg.batch = 2;
  cfg.train_clips = 4;
  cfg.heldout_clips = 2;
  cfg.phase0_steps = 2;
  cfg.phase1_steps = 3;
  cfg.phase2_steps = 3;
  cfg.vae = VaeConfig{4, 4, 4, 4};
  cfg.motion_width = 4;
  return cfg;
}

using Snapshot = std::map<std::string, TensorF::Vector>;

Snapshot snapshot(const ParameterStore<float>& store) {
  Snapshot s;
  for (const auto& e : store.entries()) s[e.name] = e.tensor.values();
  return s;
}

// Groups whose parameters differ between two snapshots.
std::set<std::string> changed_groups(const ParameterStore<float>& store, const Snapshot& before) {
  std::set<std::string> out;
  for (const auto& e : store.entries())
    if (e.tensor.values() != before.at(e.name)) out.insert(e.group);
  return out;
}

std::vector<std::string> lines(const std::vector<StepRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.line());
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "deco_test_train";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("first Adam step moves a parameter by the learning rate") {
  ParameterStore<float> store;
  TensorF x = store.add("x", "g", TensorF::zeros({3}));
  sum(x).backward();
  OptimizerState opt{AdamConfig{}, {}};
  adam_step(store, opt);
  for (Index i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(-5e-5).epsilon(1e-6));
  CHECK(opt.moments.at("x").steps == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  ParameterStore<float> store;
  Rng rng(1);
  TensorF x = store.add("x", "g", rng.normal_tensor<float>({5}));
  const TensorF::Vector before = x.values();
  OptimizerState opt{AdamConfig{}, {}};
  for (int i = 0; i < 3; ++i) adam_step(store, opt);
  CHECK(x.values() == before);
}

TEST_CASE("frozen groups keep values and moments untouched") {
  ParameterStore<float> store;
  Rng rng(2);
  TensorF a = store.add("a", "free", rng.normal_tensor<float>({4}));
  TensorF b = store.add("b", "frozen", rng.normal_tensor<float>({4}));
  const TensorF::Vector b0 = b.values();
  sum(add(square(a), square(b))).backward();
  OptimizerState opt{AdamConfig{1e-2}, {}};
  adam_step(store, opt, {"frozen"});
  CHECK(b.values() == b0);
  CHECK(opt.moments.count("b") == 0);
  CHECK(opt.moments.count("a") == 1);
  // Restricting to a group has the same effect.
  OptimizerState only{AdamConfig{1e-2}, {}};
  adam_step(store, only, {}, {"free"});
  CHECK(b.values() == b0);
}

TEST_CASE("a non-finite gradient aborts naming the parameter") {
  ParameterStore<float> store;
  TensorF x = store.add("encoder_k.stem.weight", "encoder_k", TensorF::zeros({2}));
  sum(log(x)).backward();
  OptimizerState opt{AdamConfig{}, {}};
  try {
    adam_step(store, opt);
    FAIL("expected an abort");
  } catch (const RuntimeAbort& e) {
    CHECK(std::string(e.what()).find("encoder_k.stem.weight") != std::string::npos);
  }
  CHECK(x.values().isZero(0));
}

TEST_CASE("gradient clipping by global norm") {
  ParameterStore<float> store;
  TensorF a = store.add("a", "g", TensorF({1}, (TensorF::Vector(1) << 3).finished()));
  TensorF b = store.add("b", "g", TensorF({1}, (TensorF::Vector(1) << 4).finished()));
  scale(add(square(a), square(b)), 0.5f).backward();
  auto entries = store.entries();
  CHECK(clip_grad_norm(entries, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(entries, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("config parsing") {
  const TrainConfig cfg = parse_config("# desk run\nseed = 7\n\nphase1_steps=10  # short\nschedule = single-phase\n"
                                       "encoder_layout = concat\naux_recon = off\nlr = 2e-4\n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.phase1_steps == 10);
  CHECK(cfg.schedule == Schedule::single_phase);
  CHECK(cfg.vae.layout == EncoderLayout::concat);
  CHECK_FALSE(cfg.weights.aux_components);
  CHECK(cfg.adam.lr == 2e-4);
  CHECK_THROWS_AS(parse_config("sead = 7\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("seed = seven\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("seed\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("ablation = widths\n"), ValidationError);
  // The serialised form parses back to itself.
  CHECK(to_config_text(parse_config(to_config_text(cfg))) == to_config_text(cfg));
  for (const auto& k : config_keys()) CHECK(to_config_text(cfg).find(k + " = ") != std::string::npos);
}

TEST_CASE("config validation") {
  TrainConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.frames = 6;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.phase1_steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.ablation_seeds = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  CHECK(cfg.resolved_adv_start() == 2 + 4);  // 80% of the six generator steps, rounded down
  cfg.adv_start_step = 3;
  CHECK(cfg.resolved_adv_start() == 3);
}

TEST_CASE("phase plan") {
  TrainConfig cfg = tiny_config();
  const PhasePlan two = PhasePlan::from_config(cfg);
  CHECK(two.total() == 8);
  CHECK(two.phase_at(0) == 0);
  CHECK(two.phase_at(1) == 0);
  CHECK(two.phase_at(2) == 1);
  CHECK(two.phase_at(4) == 1);
  CHECK(two.phase_at(5) == 2);
  CHECK(two.frozen[1] == std::set<std::string>{"motion_net"});
  CHECK(two.frozen[2] == std::set<std::string>{"encoder_k"});
  CHECK(two.frozen[0].count("decoder"));
  CHECK(two.frozen[0].count("discriminator"));
  CHECK_FALSE(two.frozen[0].count("motion_net"));
  cfg.schedule = Schedule::single_phase;
  const PhasePlan one = PhasePlan::from_config(cfg);
  CHECK(one.frozen[1].empty());
  CHECK(one.frozen[2].empty());
}

TEST_CASE("checkpoint serialisation is idempotent") {
  Checkpoint c;
  c.global_step = 42;
  c.phase = 2;
  c.rng_state = "1 2 3";
  c.counters = {{"x.adam_t", 9}};
  c.arrays = {{"x", {2, 2}, {1.f, -2.f, 3.5f, 0.f}}, {"empty", {0}, {}}};
  const auto bytes = serialize_checkpoint(c);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.global_step == 42);
  CHECK(back.find("x")->data[2] == 3.5f);
  CHECK(back.find("nope") == nullptr);
  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
}

TEST_CASE("freeze contract across the phases") {
  Trainer tr(tiny_config());
  Snapshot before = snapshot(tr.params());
  tr.run(2);
  CHECK(changed_groups(tr.params(), before) == std::set<std::string>{"motion_net"});

  before = snapshot(tr.params());
  tr.run(5);
  auto changed = changed_groups(tr.params(), before);
  CHECK_FALSE(changed.count("motion_net"));
  CHECK(changed.count("decoder"));
  CHECK(changed.count("encoder_k"));

  before = snapshot(tr.params());
  tr.run();
  changed = changed_groups(tr.params(), before);
  CHECK_FALSE(changed.count("encoder_k"));
  CHECK(changed.count("decoder"));
  CHECK(changed.count("motion_net"));
  CHECK(tr.finished());
  CHECK_THROWS_AS(tr.step(), ValidationError);
}

TEST_CASE("single-phase schedule trains every generator group") {
  TrainConfig cfg = tiny_config();
  cfg.schedule = Schedule::single_phase;
  Trainer tr(cfg);
  tr.run(2);
  const Snapshot before = snapshot(tr.params());
  tr.run(3);
  const auto changed = changed_groups(tr.params(), before);
  for (const char* g : {"motion_net", "encoder_k", "encoder_m", "encoder_r", "decoder"}) CHECK(changed.count(g));
}

TEST_CASE("a warm-up-only plan matches the warm-up of a longer plan") {
  TrainConfig short_cfg = tiny_config();
  short_cfg.phase1_steps = short_cfg.phase2_steps = 0;
  Trainer a(short_cfg);
  Trainer b(tiny_config());
  const auto ra = lines(a.run());
  const auto rb = lines(b.run(2));
  CHECK(ra == rb);
  CHECK(snapshot(a.params()) == snapshot(b.params()));
}

TEST_CASE("runs are bitwise reproducible and steps are monotone") {
  Trainer a(tiny_config()), b(tiny_config());
  const auto ra = a.run(), rb = b.run();
  CHECK(lines(ra) == lines(rb));
  REQUIRE(ra.size() == 8);
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].step == static_cast<std::int64_t>(i));
  CHECK(snapshot(a.params()) == snapshot(b.params()));
  TrainConfig other = tiny_config();
  other.seed = 2;
  Trainer c(other);
  CHECK(lines(c.run()) != lines(ra));
}

TEST_CASE("log lines carry eight fields") {
  Trainer tr(tiny_config());
  std::ostringstream log;
  tr.run(3, &log);
  std::istringstream in(log.str());
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::vector<std::string> f{std::istream_iterator<std::string>(fields), {}};
    CHECK(f.size() == 8);
    CHECK(f[0] == std::to_string(count));
    ++count;
  }
  CHECK(count == 3);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TrainConfig cfg = tiny_config();
  cfg.adv_start_step = 4;
  Trainer full(cfg);
  const auto reference = lines(full.run());
  for (std::int64_t cut : {1, 2, 4, 6}) {
    Trainer first(cfg);
    auto head = lines(first.run(cut));
    const fs::path p = scratch("resume.dcpt");
    save_checkpoint(first.to_checkpoint(), p);
    Trainer second(cfg);
    second.restore(load_checkpoint(p));
    CHECK(second.global_step() == cut);
    const auto tail = lines(second.run());
    head.insert(head.end(), tail.begin(), tail.end());
    INFO("cut at " << cut);
    CHECK(head == reference);
    CHECK(snapshot(second.params()) == snapshot(full.params()));
  }
}

TEST_CASE("adversarial term engages exactly at its start step") {
  TrainConfig cfg = tiny_config();
  cfg.adv_start_step = 5;
  Trainer tr(cfg);
  Snapshot before = snapshot(tr.params());
  const auto head = tr.run(5);
  for (const auto& r : head) CHECK(r.adv == 0.0);
  CHECK_FALSE(changed_groups(tr.params(), before).count("discriminator"));
  before = snapshot(tr.params());
  const StepRecord r = tr.step();
  CHECK(r.step == 5);
  CHECK(r.adv > 0.0);
  CHECK(changed_groups(tr.params(), before).count("discriminator"));
}

TEST_CASE("checkpoint restore rejects a mismatched model with every offender listed") {
  Trainer tr(tiny_config());
  tr.run(3);
  Checkpoint c = tr.to_checkpoint();
  std::erase_if(c.arrays, [](const NamedArray& a) { return a.name == "decoder.head.bias" || a.name == "encoder_m.stem.weight"; });
  c.arrays.push_back({"mystery.weight", {1}, {0.f}});
  Trainer other(tiny_config());
  const Snapshot before = snapshot(other.params());
  try {
    other.restore(c);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("decoder.head.bias") != std::string::npos);
    CHECK(msg.find("encoder_m.stem.weight") != std::string::npos);
    CHECK(msg.find("mystery.weight") != std::string::npos);
  }
  CHECK(snapshot(other.params()) == before);
  CHECK(other.global_step() == 0);

  // A wider model does not accept the narrower weights.
  TrainConfig wide = tiny_config();
  wide.vae.width2 = 8;
  Trainer w(wide);
  CHECK_THROWS_AS(w.restore(tr.to_checkpoint()), ValidationError);
}

TEST_CASE("non-finite loss writes a crash checkpoint and aborts") {
  TrainConfig cfg = tiny_config();
  const fs::path ckpt = scratch("crash_run.dcpt");
  fs::remove(fs::path(ckpt.string() + ".crash"));
  cfg.checkpoint_path = ckpt.string();
  Trainer tr(cfg);
  tr.run(3);
  TensorF w = tr.params().find("decoder.head.bias")->tensor;
  w.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    tr.step();
    FAIL("expected an abort");
  } catch (const RuntimeAbort& e) {
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
  REQUIRE(fs::exists(ckpt.string() + ".crash"));
  CHECK(load_checkpoint(ckpt.string() + ".crash").global_step == 3);
}

TEST_CASE("periodic checkpoints") {
  TrainConfig cfg = tiny_config();
  const fs::path ckpt = scratch("periodic.dcpt");
  fs::remove(ckpt);
  cfg.checkpoint_path = ckpt.string();
  cfg.checkpoint_every = 3;
  Trainer tr(cfg);
  tr.run(4);
  REQUIRE(fs::exists(ckpt));
  CHECK(load_checkpoint(ckpt).global_step == 3);
}

TEST_CASE("dataset from disk matches the in-memory dataset") {
  const TrainConfig cfg = tiny_config();
  const fs::path dir = scratch("dataset");
  fs::remove_all(dir);
  write_dataset(cfg, dir);
  TrainConfig disk = cfg;
  disk.data_dir = dir.string();
  const Dataset a = make_dataset(cfg), b = make_dataset(disk);
  REQUIRE(a.train.size() == b.train.size());
  REQUIRE(a.heldout.size() == b.heldout.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].values() == b.train[i].values());
  for (std::size_t i = 0; i < a.heldout.size(); ++i) CHECK(a.heldout[i].values() == b.heldout[i].values());
  // Held-out clips never repeat a training clip.
  CHECK(clip_seed(1, 0, false) != clip_seed(1, 0, true));
  CHECK(a.train[0].values() != a.heldout[0].values());
  TrainConfig mismatch = disk;
  mismatch.height = 24;
  CHECK_THROWS_AS(make_dataset(mismatch), ValidationError);
}

TEST_CASE("evaluation report") {
  Trainer tr(tiny_config());
  const MetricReport r = tr.evaluate_heldout();
  CHECK(std::isfinite(r.psnr));
  CHECK(r.ssim <= 1.0);
  REQUIRE(r.latents.size() == 3);
  CHECK_THROWS_AS(tr.evaluate({}), ValidationError);
  CHECK(std::isfinite(tr.evaluate({tr.data().heldout[0]}).psnr));
  CHECK(tr.reconstruct(stack_clips(tr.data().heldout)).video.shape() == Shape{2, 3, 4, 16, 16});
}

TEST_CASE("ablation runs are reproducible and keep the budget") {
  TrainConfig cfg = tiny_config();
  cfg.ablation_seeds = 1;
  const auto a = run_ablation(cfg);
  const auto b = run_ablation(cfg);
  REQUIRE(a.size() == 1);
  CHECK(a[0].variant_a == "concat");
  CHECK(a[0].variant_b == "dedicated");
  CHECK(a[0].a.to_json() == b[0].a.to_json());
  CHECK(a[0].b.to_json() == b[0].b.to_json());
  cfg.ablation = "schedule";
  const auto s = run_ablation(cfg);
  CHECK(s[0].variant_a == "single-phase");
  CHECK(s[0].variant_b == "two-phase");
}

TEST_CASE("shipped config files parse and validate") {
  const TrainConfig desk = load_config(fs::path(DECO_CONFIG_DIR) / "desk.conf");
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.total_steps() == 2500);
  const TrainConfig paper = load_config(fs::path(DECO_CONFIG_DIR) / "paper_scale.conf");
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.resolved_adv_start() == 400000);
  CHECK(paper.total_steps() == 500000);
}
