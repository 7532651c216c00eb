#pragma once

#include "pmp/eval.hpp"

namespace pmp {

struct DataConfig {
  int n_clips = 25;
  int frames_per_clip = 300;
  double frame_rate_hz = 50.0;
  double amplitude_scale = 1.0;
  double min_frequency_hz = 0.2;
  double max_frequency_hz = 0.8;
  std::uint64_t seed = 0;

  SyntheticSpec spec() const {
    SyntheticSpec s;
    s.n_clips = n_clips;
    s.frames_per_clip = frames_per_clip;
    s.frame_rate_hz = frame_rate_hz;
    s.amplitude_scale = amplitude_scale;
    s.min_frequency_hz = min_frequency_hz;
    s.max_frequency_hz = max_frequency_hz;
    return s;
  }
};

struct EvalConfig {
  int n_traj = 5;
  std::vector<double> push_vels{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> speed_factors{0.5, 1.0, 1.5, 2.0};
  double push_interval = 5.0;
  std::uint64_t seed = 0;

  RobustnessSpec robustness() const { return {push_vels, speed_factors, push_interval, n_traj}; }
};

struct TeleopConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  double state_hz = 20.0;
};

struct Config {
  std::string robot;  // model file; empty selects the built-in model
  DataConfig data;
  CVAEConfig cvae;
  PolicyConfig policy;
  PPOConfig ppo;
  EnvConfig env;
  SimConfig sim;
  int iterations = 200;
  EvalConfig eval;
  TeleopConfig teleop;

  TrainConfig train() const { return {ppo, policy, env, sim, iterations}; }
  void validate() const {
    cvae.validate();
    ppo.validate();
    sim.validate();
    eval.robustness().validate();
    if (iterations < 1) throw ArgumentError("config: iterations must be >= 1");
    if (data.n_clips < 1 || data.frames_per_clip < 2) throw ArgumentError("config: data needs >= 1 clip of >= 2 frames");
    if (teleop.port < 0 || teleop.port > 65535) throw ArgumentError("config: teleop.port out of range");
    if (!(teleop.state_hz > 0.0)) throw ArgumentError("config: teleop.state_hz must be > 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, n_clips, frames_per_clip, frame_rate_hz, amplitude_scale,
                                                min_frequency_hz, max_frequency_hz, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, n_traj, push_vels, speed_factors, push_interval, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TeleopConfig, host, port, state_hz)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CVAEConfig, W, H, hidden, kl_weight, epochs, batch_size, learning_rate, stride, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PolicyConfig, actor_hidden, critic_hidden, init_log_std, output_init_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PPOConfig, gamma, lambda, clip, epochs, minibatches, horizon, n_envs,
                                                entropy_coef, value_coef, learning_rate, max_grad_norm, max_episode_s, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CommandRanges, vx_min, vx_max, h_min_frac, h_max_frac, pitch_min, pitch_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardWeights, lin_vel, height, orient, gait, action_rate, joint_acc, torque, alive)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GaitConfig, period, standing_threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CurriculumConfig, alpha_init, alpha_min, up, down, survival_threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnvConfig, commands, reward, gait, curriculum, action_scale, action_clip,
                                                fall_height_frac, fall_pitch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GroundParams, stiffness, damping, friction, tangential_stiffness, tangential_damping)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimConfig, dt_physics, control_decimation, gravity, ground, kp_lower, kd_lower,
                                                kp_upper, kd_upper, contact_enabled, momentum_projection)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, robot, data, cvae, policy, ppo, env, sim, iterations, eval, teleop)

namespace detail {

inline void check_known_keys(const nlohmann::json& reference, const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    const auto here = path.empty() ? k : path + "." + k;
    if (!reference.contains(k)) throw ArgumentError("config: unknown key '" + here + "'");
    if (reference[k].is_object()) {
      if (!v.is_object()) throw ArgumentError("config: '" + here + "' must be an object");
      check_known_keys(reference[k], v, here);
    }
  }
}

}  // namespace detail

// "a.b=3" sets j["a"]["b"]; the value is read as JSON, falling back to a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ArgumentError("config: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ArgumentError("config: '" + key + "' is a section, not a value");
  auto value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

inline Config config_from_json(const nlohmann::json& j) {
  const nlohmann::json reference = Config{};
  detail::check_known_keys(reference, j, "");
  nlohmann::json merged = reference;
  merged.merge_patch(j);
  Config c;
  try {
    c = merged.get<Config>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// File (if any) over built-in defaults, then each override in order.
inline Config load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) j = json_util::parse_file(path);
  if (!j.is_object()) throw ArgumentError("config: top level must be an object");
  const nlohmann::json reference = Config{};
  detail::check_known_keys(reference, j, "");
  nlohmann::json merged = reference;
  merged.merge_patch(j);
  for (const auto& o : overrides) apply_override(merged, o);
  return config_from_json(merged);
}

inline RobotModel config_robot(const Config& c) { return c.robot.empty() ? default_robot() : load_robot(c.robot); }

// Body of the teleop server's GET /model: link geometry for client-side FK and
// the command ranges clients clamp to (h bounds are fractions of
// robot.base.nominal_height).
inline nlohmann::json teleop_model(const RobotModel& robot, const CommandRanges& commands) {
  return {{"robot", robot}, {"commands", commands}};
}

}  // namespace pmp
