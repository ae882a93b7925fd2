#include "deco/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace deco {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ValidationError("config: bad value '" + v + "' for " + key);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError("config: bad value '" + v + "' for " + key);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ValidationError("config: bad boolean '" + v + "' for " + key);
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Key {
  std::string name;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Key int_key(std::string name, T TrainConfig::*member) {
  return {name, [name, member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Key str_key(std::string name, std::string TrainConfig::*member) {
  return {name, [member](TrainConfig& c, const std::string& v) { c.*member = v; },
          [member](const TrainConfig& c) { return c.*member; }};
}

template <typename Get>
Key real_key(std::string name, Get ref) {
  return {name, [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_real(name, v); },
          [ref](const TrainConfig& c) { return fmt_real(ref(const_cast<TrainConfig&>(c))); }};
}

template <typename Get>
Key index_key(std::string name, Get ref) {
  return {name, [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_number<Index>(name, v); },
          [ref](const TrainConfig& c) { return std::to_string(ref(const_cast<TrainConfig&>(c))); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(int_key("seed", &TrainConfig::seed));
    k.push_back(int_key("frames", &TrainConfig::frames));
    k.push_back(int_key("height", &TrainConfig::height));
    k.push_back(int_key("width", &TrainConfig::width));
    k.push_back(int_key("batch", &TrainConfig::batch));
    k.push_back(int_key("train_clips", &TrainConfig::train_clips));
    k.push_back(int_key("heldout_clips", &TrainConfig::heldout_clips));
    k.push_back({"regime", [](TrainConfig& c, const std::string& v) { c.regime = parse_regime(v); },
                 [](const TrainConfig& c) { return std::string(regime_name(c.regime)); }});
    k.push_back(str_key("data_dir", &TrainConfig::data_dir));
    k.push_back(int_key("phase0_steps", &TrainConfig::phase0_steps));
    k.push_back(int_key("phase1_steps", &TrainConfig::phase1_steps));
    k.push_back(int_key("phase2_steps", &TrainConfig::phase2_steps));
    k.push_back({"schedule",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "two-phase") c.schedule = Schedule::two_phase;
                   else if (v == "single-phase") c.schedule = Schedule::single_phase;
                   else throw ValidationError("config: schedule must be two-phase or single-phase, got '" + v + "'");
                 },
                 [](const TrainConfig& c) {
                   return std::string(c.schedule == Schedule::two_phase ? "two-phase" : "single-phase");
                 }});
    k.push_back(int_key("adv_start_step", &TrainConfig::adv_start_step));
    k.push_back(real_key("lr", [](TrainConfig& c) -> double& { return c.adam.lr; }));
    k.push_back(real_key("beta1", [](TrainConfig& c) -> double& { return c.adam.beta1; }));
    k.push_back(real_key("beta2", [](TrainConfig& c) -> double& { return c.adam.beta2; }));
    k.push_back(real_key("motion_lr", [](TrainConfig& c) -> double& { return c.motion_lr; }));
    k.push_back(real_key("clip_norm", [](TrainConfig& c) -> double& { return c.clip_norm; }));
    k.push_back(real_key("lambda_recon", [](TrainConfig& c) -> double& { return c.weights.recon; }));
    k.push_back(real_key("lambda_p", [](TrainConfig& c) -> double& { return c.weights.perceptual; }));
    k.push_back(real_key("lambda_kl", [](TrainConfig& c) -> double& { return c.weights.kl; }));
    k.push_back(real_key("lambda_adv", [](TrainConfig& c) -> double& { return c.weights.adv; }));
    k.push_back({"aux_recon",
                 [](TrainConfig& c, const std::string& v) { c.weights.aux_components = parse_bool("aux_recon", v); },
                 [](const TrainConfig& c) { return std::string(c.weights.aux_components ? "true" : "false"); }});
    k.push_back(index_key("latent_channels", [](TrainConfig& c) -> Index& { return c.vae.latent_channels; }));
    k.push_back(index_key("width_stem", [](TrainConfig& c) -> Index& { return c.vae.width_stem; }));
    k.push_back(index_key("width1", [](TrainConfig& c) -> Index& { return c.vae.width1; }));
    k.push_back(index_key("width2", [](TrainConfig& c) -> Index& { return c.vae.width2; }));
    k.push_back({"encoder_layout",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "dedicated") c.vae.layout = EncoderLayout::dedicated;
                   else if (v == "concat") c.vae.layout = EncoderLayout::concat;
                   else throw ValidationError("config: encoder_layout must be dedicated or concat, got '" + v + "'");
                 },
                 [](const TrainConfig& c) {
                   return std::string(c.vae.layout == EncoderLayout::dedicated ? "dedicated" : "concat");
                 }});
    k.push_back(int_key("motion_width", &TrainConfig::motion_width));
    k.push_back(int_key("perceptual_seed", &TrainConfig::perceptual_seed));
    k.push_back(str_key("log_path", &TrainConfig::log_path));
    k.push_back(str_key("checkpoint_path", &TrainConfig::checkpoint_path));
    k.push_back(int_key("checkpoint_every", &TrainConfig::checkpoint_every));
    k.push_back(str_key("out_dir", &TrainConfig::out_dir));
    k.push_back(str_key("input", &TrainConfig::input));
    k.push_back(str_key("output", &TrainConfig::output));
    k.push_back(str_key("ppm_dir", &TrainConfig::ppm_dir));
    k.push_back(str_key("reference", &TrainConfig::reference));
    k.push_back(str_key("candidate", &TrainConfig::candidate));
    k.push_back({"ablation",
                 [](TrainConfig& c, const std::string& v) {
                   if (v != "layout" && v != "schedule")
                     throw ValidationError("config: ablation must be layout or schedule, got '" + v + "'");
                   c.ablation = v;
                 },
                 [](const TrainConfig& c) { return c.ablation; }});
    k.push_back(int_key("ablation_seeds", &TrainConfig::ablation_seeds));
    return k;
  }();
  return table;
}

}  // namespace

std::int64_t TrainConfig::resolved_adv_start() const {
  if (adv_start_step >= 0) return adv_start_step;
  return phase0_steps + (8 * (phase1_steps + phase2_steps)) / 10;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  require(frames >= 2 && height >= 16 && width >= 16, "frames >= 2 and height, width >= 16 required");
  require(frames % kTemporalFactor == 0, "frames must be a multiple of 4");
  require(height % kSpatialFactor == 0 && width % kSpatialFactor == 0, "height and width must be multiples of 8");
  require(batch >= 1 && train_clips >= 1 && heldout_clips >= 1, "batch, train_clips and heldout_clips must be >= 1");
  require(phase0_steps >= 0 && phase1_steps >= 0 && phase2_steps >= 0, "phase step counts must be >= 0");
  require(adam.lr > 0 && motion_lr > 0, "learning rates must be positive");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1, "betas must lie in [0, 1)");
  require(weights.recon >= 0 && weights.perceptual >= 0 && weights.kl >= 0 && weights.adv >= 0,
          "loss weights must be >= 0");
  require(vae.latent_channels >= 1 && vae.width_stem >= 1 && vae.width1 >= 1 && vae.width2 >= 1 && motion_width >= 1,
          "widths must be >= 1");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(ablation_seeds >= 1, "ablation_seeds must be >= 1");
}

void apply_setting(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("config: expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  for (const auto& k : keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ValidationError("config: unknown key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(base, line);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace deco
