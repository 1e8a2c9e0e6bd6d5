#include "gazeracer/config/config.hpp"

#include <functional>
#include <map>

#include <json.hpp>

#include "gazeracer/util/io.hpp"

namespace gazeracer::config {

using json = nlohmann::ordered_json;

namespace {

struct Field {
  std::string key;  // dotted path
  std::string type;
  std::string description;
  std::function<json(const Config&)> get;
  std::function<void(Config&, const json&)> set;
};

[[noreturn]] void fail(const std::string& key, const std::string& what) {
  throw ConfigError("config: '" + key + "' " + what);
}

template <class T>
T read(const std::string& key, const json& v);

template <>
int read<int>(const std::string& key, const json& v) {
  if (!v.is_number_integer()) fail(key, "must be an integer");
  const auto x = v.get<long long>();
  if (x < -2147483647LL || x > 2147483647LL) fail(key, "is out of range");
  return static_cast<int>(x);
}

template <>
std::uint64_t read<std::uint64_t>(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    fail(key, "must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

template <>
double read<double>(const std::string& key, const json& v) {
  if (!v.is_number()) fail(key, "must be a number");
  return v.get<double>();
}

template <>
bool read<bool>(const std::string& key, const json& v) {
  if (!v.is_boolean()) fail(key, "must be true or false");
  return v.get<bool>();
}

template <>
std::string read<std::string>(const std::string& key, const json& v) {
  if (!v.is_string()) fail(key, "must be a string");
  return v.get<std::string>();
}

template <>
std::vector<int> read<std::vector<int>>(const std::string& key, const json& v) {
  if (!v.is_array()) fail(key, "must be an array of integers");
  std::vector<int> out;
  for (const auto& e : v) out.push_back(read<int>(key, e));
  return out;
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) return "integer";
  else if constexpr (std::is_same_v<T, double>) return "number";
  else if constexpr (std::is_same_v<T, bool>) return "boolean";
  else if constexpr (std::is_same_v<T, std::string>) return "string";
  else return "integer array";
}

template <class T, class Access>
Field field(std::string key, std::string description, Access access) {
  Field f;
  f.key = key;
  f.type = type_name<T>();
  f.description = std::move(description);
  f.get = [access](const Config& c) { return json(access(const_cast<Config&>(c))); };
  f.set = [access, key](Config& c, const json& v) { access(c) = read<T>(key, v); };
  return f;
}

#define FIELD(T, key, desc, expr) field<T>(key, desc, [](Config& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      FIELD(int, "sim.physics_hz", "physics integration rate", c.rates.physics_hz),
      FIELD(int, "sim.control_hz", "controller rate", c.rates.control_hz),
      FIELD(int, "sim.vision_hz", "camera frame rate", c.rates.vision_hz),
      FIELD(double, "sim.timeout_factor", "rollout timeout as a multiple of the reference duration",
            c.rates.timeout_factor),
      FIELD(double, "sim.start_jitter", "uniform initial position jitter, m", c.rates.start_jitter),
      FIELD(double, "quad.mass", "vehicle mass, kg", c.rates.params.mass),
      FIELD(double, "quad.c_max", "collective thrust limit, N", c.rates.params.c_max),
      FIELD(double, "quad.w_max", "body-rate limit, rad/s", c.rates.params.w_max),
      FIELD(double, "quad.g", "gravity, m/s^2", c.rates.params.g),
      FIELD(double, "quad.rate_lag_tau", "first-order body-rate lag, s (0 = instantaneous)",
            c.rates.params.rate_lag_tau),
      FIELD(int, "camera.width", "image width, px", c.camera.width),
      FIELD(int, "camera.height", "image height, px", c.camera.height),
      FIELD(double, "camera.hfov", "horizontal field of view, degrees", c.camera.hfov),
      FIELD(double, "camera.uptilt", "camera pitch above the body x axis, degrees", c.camera.uptilt),
      FIELD(double, "mpc.horizon", "prediction horizon, s", c.mpc.horizon),
      FIELD(int, "mpc.nodes", "control intervals over the horizon", c.mpc.nodes),
      FIELD(double, "mpc.w_p", "position weight", c.mpc.w_p),
      FIELD(double, "mpc.w_v", "velocity weight", c.mpc.w_v),
      FIELD(double, "mpc.w_q", "attitude weight", c.mpc.w_q),
      FIELD(double, "mpc.w_u", "control weight", c.mpc.w_u),
      FIELD(int, "mpc.max_iterations", "iLQR iterations per solve", c.mpc.max_iterations),
      FIELD(double, "mpc.tol", "relative cost decrease counted as converged", c.mpc.tol),
      FIELD(int, "references.count", "references per split", c.references.options.count),
      FIELD(double, "references.offset", "max gate passage offset, m", c.references.options.offset),
      FIELD(double, "references.speed_min", "minimum reference speed, m/s", c.references.options.speed_min),
      FIELD(double, "references.speed_max", "maximum reference speed, m/s", c.references.options.speed_max),
      FIELD(std::uint64_t, "references.seed", "seed of the train/test reference sets", c.references.seed),
      FIELD(std::string, "data.track", "track flown for attention data (oval, figure8 or a track file)", c.data_track),
      FIELD(int, "data.frames", "frames sampled over the expert laps", c.data.frames),
      FIELD(int, "data.gaze_width", "synthetic gaze resolution width, px", c.data.gaze_width),
      FIELD(int, "data.gaze_height", "synthetic gaze resolution height, px", c.data.gaze_height),
      FIELD(double, "data.gaze_variance", "fixation Gaussian variance at gaze resolution, px^2",
            c.data.gaze_variance),
      FIELD(int, "attention.base_channels", "channels of the first encoder stage", c.attention.base_channels),
      FIELD(double, "attention.val_fraction", "fraction of laps held out", c.attention.val_fraction),
      FIELD(int, "attention.epochs", "training epochs", c.attention.train.epochs),
      FIELD(int, "attention.batch", "batch size", c.attention.train.batch),
      FIELD(double, "attention.lr", "Adam learning rate", c.attention.train.lr),
      FIELD(bool, "attention.augment", "photometric augmentation", c.attention.train.augment),
      FIELD(std::string, "policy.track", "track for policy training and evaluation", c.policy_track),
      FIELD(int, "policy.ref_len", "reference window samples (50 Hz)", c.policy.ref_len),
      FIELD(int, "policy.state_len", "state window samples (100 Hz)", c.policy.state_len),
      FIELD(int, "policy.visual_len", "visual window samples (25 Hz)", c.policy.visual_len),
      FIELD(std::vector<int>, "policy.temporal_channels", "temporal conv channels per branch",
            c.policy.temporal_channels),
      FIELD(std::vector<int>, "policy.head", "hidden widths of the control head", c.policy.head),
      FIELD(int, "policy.pointnet_units", "per-point map width for tracks", c.policy.pointnet_units),
      FIELD(std::vector<int>, "policy.image_channels", "image conv stack channels", c.policy.image_channels),
      FIELD(int, "dagger.iterations", "DAgger iterations", c.dagger.iterations),
      FIELD(int, "dagger.rollouts", "rollouts per iteration", c.dagger.rollouts),
      FIELD(int, "dagger.epochs", "training epochs per iteration", c.dagger.epochs),
      FIELD(double, "dagger.noise_p_start", "expert noise probability, first iteration", c.dagger.noise_p_start),
      FIELD(double, "dagger.noise_p_end", "expert noise probability, last iteration", c.dagger.noise_p_end),
      FIELD(double, "dagger.noise_thrust", "thrust noise sigma, m/s^2", c.dagger.noise_thrust),
      FIELD(double, "dagger.noise_rates", "body-rate noise sigma, rad/s", c.dagger.noise_rates),
      FIELD(double, "dagger.tau_thrust", "thrust blending threshold, first iteration, m/s^2", c.dagger.tau_thrust),
      FIELD(double, "dagger.tau_rates", "rate blending threshold, first iteration, rad/s", c.dagger.tau_rates),
      FIELD(double, "dagger.tau_growth", "threshold growth per iteration", c.dagger.tau_growth),
      FIELD(int, "dagger.batch", "policy batch size", c.dagger.batch),
      FIELD(double, "dagger.lr", "policy Adam learning rate", c.dagger.lr),
      FIELD(int, "eval.reps", "repetitions per reference", c.eval.reps),
      FIELD(std::string, "eval.split", "reference split evaluated (train or test)", c.eval.split),
      FIELD(int, "bench.ticks", "control ticks timed per modality", c.bench.ticks),
      FIELD(double, "bench.budget_ms", "act() latency budget, ms", c.bench.budget_ms),
      FIELD(int, "jobs", "worker count (only 1 is supported)", c.jobs),
  };
  return f;
}

#undef FIELD

void wrap_module(const char* section, const std::function<void()>& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: " + std::string(section) + ": " + e.what());
  }
}

json nested(const json& flat_values) {
  json out = json::object();
  for (const auto& [key, value] : flat_values.items()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out[key] = value;
    } else {
      out[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
  }
  return out;
}

}  // namespace

policy::PolicyConfig Config::resolved_policy() const {
  policy::PolicyConfig p = policy;
  p.image_width = camera.width;
  p.image_height = camera.height;
  p.attention_features = attention_net().feature_length();
  return p;
}

std::vector<ReferenceTrajectory> Config::reference_split(const Track& track, const std::string& split) const {
  if (split != "train" && split != "test") throw ConfigError("reference split must be 'train' or 'test', got '" + split + "'");
  const std::uint64_t tag = split == "train" ? 0x545241 : 0x54455354;
  return generate_reference_set(track, references.options, derive_seed(references.seed, {tag}));
}

void Config::validate() const {
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) fail(key, "must be positive");
  };
  positive("attention.epochs", attention.train.epochs);
  positive("attention.batch", attention.train.batch);
  positive("attention.lr", attention.train.lr);
  positive("attention.base_channels", attention.base_channels);
  positive("eval.reps", eval.reps);
  positive("bench.ticks", bench.ticks);
  positive("bench.budget_ms", bench.budget_ms);
  positive("references.count", references.options.count);
  positive("data.frames", data.frames);
  positive("dagger.iterations", dagger.iterations);
  positive("dagger.rollouts", dagger.rollouts);
  positive("dagger.epochs", dagger.epochs);
  positive("dagger.batch", dagger.batch);
  positive("dagger.lr", dagger.lr);
  if (!(attention.val_fraction > 0 && attention.val_fraction < 1)) fail("attention.val_fraction", "must lie in (0, 1)");
  if (eval.split != "train" && eval.split != "test") fail("eval.split", "must be 'train' or 'test'");
  if (camera.width < 16 || camera.height < 16) fail("camera.width", "and camera.height must be at least 16");
  if (jobs != 1) fail("jobs", "must be 1 (parallel workers are not supported)");
  if (!(references.options.speed_min > 0 && references.options.speed_min <= references.options.speed_max)) {
    fail("references.speed_min", "must be positive and not above references.speed_max");
  }
  if (references.options.offset < 0) fail("references.offset", "must be non-negative");
  wrap_module("sim", [&] { rates.validate(); });
  wrap_module("camera", [&] { camera.validate(); });
  wrap_module("mpc", [&] { mpc.validate(); });
  wrap_module("attention", [&] { attention_net().validate(); });
  wrap_module("data", [&] {
    attention::DataGenConfig d = data;
    d.width = camera.width;
    d.height = camera.height;
    d.validate();
  });
  wrap_module("policy", [&] { resolved_policy().validate(); });
  wrap_module("dagger", [&] { dagger.validate(); });
}

Config parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::map<std::string, const Field*> by_key;
  std::map<std::string, bool> sections;
  for (const Field& f : fields()) {
    by_key[f.key] = &f;
    const auto dot = f.key.find('.');
    if (dot != std::string::npos) sections[f.key.substr(0, dot)] = true;
  }
  Config c;
  for (const auto& [key, value] : j.items()) {
    if (sections.count(key)) {
      if (!value.is_object()) fail(key, "must be an object");
      for (const auto& [sub, v] : value.items()) {
        const std::string full = key + "." + sub;
        const auto it = by_key.find(full);
        if (it == by_key.end()) fail(full, "is not a known key");
        it->second->set(c, v);
      }
    } else {
      const auto it = by_key.find(key);
      if (it == by_key.end()) fail(key, "is not a known key");
      it->second->set(c, value);
    }
  }
  c.validate();
  return c;
}

Config load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("config: cannot read '" + path + "': " + e.what());
  }
  return parse_config(text);
}

std::string to_json(const Config& cfg) {
  json flat = json::object();
  for (const Field& f : fields()) flat[f.key] = f.get(cfg);
  return nested(flat).dump(2) + "\n";
}

std::string schema_json() {
  const Config defaults;
  json out = json::object();
  for (const Field& f : fields()) {
    out[f.key] = {{"type", f.type}, {"default", f.get(defaults)}, {"description", f.description}};
  }
  return out.dump(2) + "\n";
}

std::string preset_json(const std::string& name) {
  if (name == "desk") return "{}\n";
  if (name == "full") {
    json j;
    j["camera"] = {{"width", 400}, {"height", 300}};
    j["attention"] = {{"batch", 128}, {"lr", 2e-4}, {"epochs", 5}};
    j["dagger"] = {{"iterations", 5}, {"rollouts", 30}, {"epochs", 20}};
    return j.dump(2) + "\n";
  }
  throw ConfigError("config: unknown preset '" + name + "' (desk, full)");
}

}  // namespace gazeracer::config
