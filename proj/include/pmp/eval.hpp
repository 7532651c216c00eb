#pragma once

#include "pmp/env.hpp"

#include <cstdio>
#include <fstream>

namespace pmp {

struct EpisodeMetrics {
  double E_jpe_upper = 0.0;
  double E_kpe_upper = 0.0;
  double E_acc_upper = 0.0;
  double E_action_upper = 0.0;
  double E_vel = 0.0;
  double E_ang = 0.0;
  double E_acc_lower = 0.0;
  double E_action_lower = 0.0;
  double E_g = 0.0;
  double survival = 0.0;
};

inline constexpr const char* kMetricNames[] = {"E_jpe_upper", "E_kpe_upper", "E_acc_upper",    "E_action_upper", "E_vel",
                                               "E_ang",       "E_acc_lower", "E_action_lower", "E_g",            "survival"};

inline std::array<double, 10> metric_values(const EpisodeMetrics& m) {
  return {m.E_jpe_upper, m.E_kpe_upper, m.E_acc_upper, m.E_action_upper, m.E_vel,
          m.E_ang,       m.E_acc_lower, m.E_action_lower, m.E_g,         m.survival};
}

inline EpisodeMetrics metrics_from_values(const std::array<double, 10>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
}

namespace detail {

// Upper-body keypoints in the base frame.
inline std::vector<Vec2> upper_keypoints(const RobotModel& robot, const Vec& q) {
  const auto pts = forward_kinematics(robot, Vec2::Zero(), 0.0, q);
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < robot.keypoint_joints.size(); ++i)
    if (robot.keypoint_joints[i] >= robot.n_lower) out.push_back(pts[i]);
  return out;
}

inline double mean_abs_second_difference(const std::vector<Vec>& x, Eigen::Index start, Eigen::Index n, double dt) {
  double sum = 0.0;
  for (std::size_t t = 1; t + 1 < x.size(); ++t)
    sum += ((x[t + 1].segment(start, n) - 2.0 * x[t].segment(start, n) + x[t - 1].segment(start, n)) / (dt * dt))
               .cwiseAbs()
               .mean();
  return sum / static_cast<double>(x.size() - 2);
}

inline double mean_l1_rate(const std::vector<Vec>& x) {
  double sum = 0.0;
  for (std::size_t t = 1; t < x.size(); ++t) sum += (x[t] - x[t - 1]).lpNorm<1>() / static_cast<double>(x[t].size());
  return sum / static_cast<double>(x.size() - 1);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Trajectory entries are the states after each control step; upper_target[t]
// is the target that was applied during step t.
inline EpisodeMetrics compute_metrics(const Trajectory& tr, const RobotModel& robot) {
  const int T = tr.steps();
  if (T < 3) throw ArgumentError("compute_metrics: need at least 3 control steps, got " + std::to_string(T));
  const auto nl = static_cast<Eigen::Index>(robot.n_lower), nu = static_cast<Eigen::Index>(robot.n_upper);
  const auto n = static_cast<std::size_t>(T);
  if (tr.upper_target.size() != n || tr.action.size() != n || tr.pitch.size() != n || tr.pitch_rate.size() != n ||
      tr.vx.size() != n)
    throw ShapeError("compute_metrics: trajectory fields have inconsistent lengths");

  EpisodeMetrics m;
  for (std::size_t t = 0; t < n; ++t) {
    const Vec& q = tr.q[t];
    m.E_jpe_upper += (tr.upper_target[t] - q.segment(nl, nu)).cwiseAbs().mean();
    Vec qt = q;
    qt.segment(nl, nu) = tr.upper_target[t];
    const auto want = detail::upper_keypoints(robot, qt), got = detail::upper_keypoints(robot, q);
    double kp = 0.0;
    for (std::size_t k = 0; k < want.size(); ++k) kp += (want[k] - got[k]).norm();
    if (!want.empty()) m.E_kpe_upper += kp / static_cast<double>(want.size());
    m.E_vel += std::abs(tr.command.vx - tr.vx[t]);
    m.E_ang += std::abs(tr.pitch_rate[t]);
    m.E_g += std::abs(std::sin(tr.pitch[t]));
  }
  const double inv = 1.0 / static_cast<double>(T);
  m.E_jpe_upper *= inv;
  m.E_kpe_upper *= inv;
  m.E_vel *= inv;
  m.E_ang *= inv;
  m.E_g *= inv;
  m.E_acc_upper = detail::mean_abs_second_difference(tr.q, nl, nu, tr.dt_control);
  m.E_acc_lower = detail::mean_abs_second_difference(tr.q, 0, nl, tr.dt_control);
  m.E_action_upper = detail::mean_l1_rate(tr.upper_target);
  m.E_action_lower = detail::mean_l1_rate(tr.action);
  m.survival = tr.survival;
  return m;
}

struct EvalSpec {
  std::string method = "pmp";
  int n_traj = 5;
  double push_vel = 0.0;
  double speed_factor = 1.0;
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::string method;
  std::string clip_id;  // "ALL" for the dataset aggregate
  std::string trial;    // trial index, or "mean"
  double push_vel = 0.0;
  double speed_factor = 1.0;
  EpisodeMetrics metrics;
};

struct EvalTable {
  std::vector<EvalRow> episodes;    // one per (clip, trial), clip-major
  std::vector<EvalRow> clip_means;  // one per clip
  EvalRow overall;

  std::vector<EvalRow> rows() const {
    std::vector<EvalRow> out = episodes;
    out.insert(out.end(), clip_means.begin(), clip_means.end());
    out.push_back(overall);
    return out;
  }
};

inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t clip_index, int trial) {
  return detail::splitmix64(detail::splitmix64(seed ^ detail::splitmix64(clip_index)) + static_cast<std::uint64_t>(trial));
}

// Deterministic rollout with the policy mean; runs to termination.
inline Trajectory run_episode(const PolicyModel& policy, LocoEnv& env, std::size_t clip_index) {
  Vec obs = env.reset(nullptr, clip_index);
  for (;;) {
    const auto r = env.step(mlp_forward(policy.actor, obs.transpose()).y.row(0).transpose());
    if (r.done) break;
    obs = r.obs;
  }
  return env.trajectory();
}

inline void check_compatible(const PolicyModel& policy, const PolicyMeta& meta, const CVAEModel* prior,
                             const MotionDataset& dataset, const RobotModel& robot, int env_obs_dim) {
  if (policy.obs_dim != env_obs_dim)
    throw CompatibilityError("policy expects obs_dim " + std::to_string(policy.obs_dim) + " but the environment produces " +
                             std::to_string(env_obs_dim));
  if (policy.act_dim != robot.n_lower || meta.n_lower != robot.n_lower || meta.n_upper != robot.n_upper)
    throw CompatibilityError("policy joint layout does not match the robot model");
  if (static_cast<int>(dataset.joint_names.size()) != robot.n_upper)
    throw CompatibilityError("dataset upper-joint count does not match the robot model");
  if (meta.uses_prior != (prior != nullptr))
    throw CompatibilityError(meta.uses_prior ? "policy was trained with a motion prior; none was given"
                                             : "policy was trained without a motion prior; one was given");
  if (prior && prior->config.H != meta.H)
    throw CompatibilityError("motion prior latent size " + std::to_string(prior->config.H) + " differs from the policy's " +
                             std::to_string(meta.H));
}

inline EpisodeMetrics mean_metrics(const std::vector<EpisodeMetrics>& ms) {
  std::array<double, 10> acc{};
  for (const auto& m : ms) {
    const auto v = metric_values(m);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  for (auto& a : acc) a /= static_cast<double>(ms.size());
  return metrics_from_values(acc);
}

// n_traj episodes per clip at alpha = 1. Each (clip, trial) gets its own seed,
// which fixes the sampled command.
inline EvalTable run_eval(const PolicyModel& policy, const PolicyMeta& meta, const CVAEModel* prior,
                          const MotionDataset& dataset, const RobotModel& robot, const SimConfig& sim_config,
                          EnvConfig env_config, const EvalSpec& spec) {
  if (spec.n_traj < 1) throw ArgumentError("eval: n_traj must be positive");
  if (dataset.clips.empty()) throw DatasetError("eval: dataset has no clips");
  env_config.fixed_alpha = 1.0;
  env_config.push_vel = spec.push_vel;
  env_config.speed_factor = spec.speed_factor;
  env_config.action_scale = meta.action_scale;
  env_config.action_clip = meta.action_clip;
  if (!prior) env_config.latent_dim = meta.H;

  EvalTable table;
  std::vector<EpisodeMetrics> all;
  for (std::size_t ci = 0; ci < dataset.clips.size(); ++ci) {
    std::vector<EpisodeMetrics> per_clip;
    for (int trial = 0; trial < spec.n_traj; ++trial) {
      LocoEnv env(robot, sim_config, env_config, dataset, prior, episode_seed(spec.seed, ci, trial));
      if (ci == 0 && trial == 0) check_compatible(policy, meta, prior, dataset, robot, env.obs_dim());
      const auto m = compute_metrics(run_episode(policy, env, ci), robot);
      per_clip.push_back(m);
      table.episodes.push_back({spec.method, dataset.clips[ci].id, std::to_string(trial), spec.push_vel, spec.speed_factor, m});
    }
    const auto cm = mean_metrics(per_clip);
    table.clip_means.push_back({spec.method, dataset.clips[ci].id, "mean", spec.push_vel, spec.speed_factor, cm});
    all.insert(all.end(), per_clip.begin(), per_clip.end());
  }
  table.overall = {spec.method, "ALL", "mean", spec.push_vel, spec.speed_factor, mean_metrics(all)};
  return table;
}

struct RobustnessSpec {
  std::vector<double> push_vels{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> speed_factors{0.5, 1.0, 1.5, 2.0};
  double push_interval = 5.0;
  int trials = 5;

  void validate() const {
    if (push_vels.empty() || speed_factors.empty()) throw ArgumentError("robustness: grids must be non-empty");
    if (!(push_interval > 0.0)) throw ArgumentError("robustness: push interval must be positive");
    if (trials < 1) throw ArgumentError("robustness: trials must be positive");
    for (double s : speed_factors)
      if (!(s > 0.0)) throw ArgumentError("robustness: speed factors must be positive");
  }
};

struct RobustnessResult {
  std::vector<EvalTable> push;   // one per push_vel, speed factor 1
  std::vector<EvalTable> speed;  // one per speed factor, no pushes

  std::vector<EvalRow> rows() const {
    std::vector<EvalRow> out;
    for (const auto* grid : {&push, &speed})
      for (const auto& t : *grid) {
        const auto r = t.rows();
        out.insert(out.end(), r.begin(), r.end());
      }
    return out;
  }
};

inline RobustnessResult robustness_sweep(const PolicyModel& policy, const PolicyMeta& meta, const CVAEModel* prior,
                                         const MotionDataset& dataset, const RobotModel& robot,
                                         const SimConfig& sim_config, EnvConfig env_config, const RobustnessSpec& rs,
                                         const std::string& method = "pmp", std::uint64_t seed = 0) {
  rs.validate();
  env_config.push_interval = rs.push_interval;
  RobustnessResult out;
  for (double v : rs.push_vels)
    out.push.push_back(run_eval(policy, meta, prior, dataset, robot, sim_config, env_config, {method, rs.trials, v, 1.0, seed}));
  for (double s : rs.speed_factors)
    out.speed.push_back(run_eval(policy, meta, prior, dataset, robot, sim_config, env_config, {method, rs.trials, 0.0, s, seed}));
  return out;
}

inline constexpr const char* kReportHeader =
    "method,clip_id,trial,push_vel,speed_factor,E_jpe_upper,E_kpe_upper,E_acc_upper,E_action_upper,E_vel,E_ang,E_acc_lower,"
    "E_action_lower,E_g,survival";

enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ArgumentError("report format must be csv or json, got '" + s + "'");
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_csv(const std::vector<EvalRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += r.method + "," + r.clip_id + "," + r.trial + "," + format_number(r.push_vel) + "," + format_number(r.speed_factor);
    for (double v : metric_values(r.metrics)) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

inline nlohmann::json report_json(const std::vector<EvalRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"method", r.method}, {"clip_id", r.clip_id}, {"trial", r.trial}, {"push_vel", r.push_vel},
                     {"speed_factor", r.speed_factor}};
    const auto v = metric_values(r.metrics);
    for (std::size_t i = 0; i < v.size(); ++i) j[kMetricNames[i]] = v[i];
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::vector<EvalRow> rows_from_json(const nlohmann::json& j) {
  using namespace json_util;
  if (!j.is_array()) throw SchemaError("report: expected an array");
  std::vector<EvalRow> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto ctx = "report[" + std::to_string(i) + "]";
    EvalRow r{get<std::string>(j[i], "method", ctx), get<std::string>(j[i], "clip_id", ctx), get<std::string>(j[i], "trial", ctx),
              get<double>(j[i], "push_vel", ctx), get<double>(j[i], "speed_factor", ctx), {}};
    std::array<double, 10> v{};
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = get<double>(j[i], kMetricNames[k], ctx);
    r.metrics = metrics_from_values(v);
    out.push_back(std::move(r));
  }
  return out;
}

inline void emit_report(const std::vector<EvalRow>& rows, const std::string& path, ReportFormat format) {
  json_util::write_file(path, format == ReportFormat::csv ? report_csv(rows) : report_json(rows).dump(2) + "\n");
}

}  // namespace pmp
