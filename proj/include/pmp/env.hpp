#pragma once

#include "pmp/cvae.hpp"
#include "pmp/motion_data.hpp"
#include "pmp/policy.hpp"
#include "pmp/sim.hpp"

#include <functional>
#include <optional>

namespace pmp {

struct EnvConfig {
  CommandRanges commands;
  RewardWeights reward;
  GaitConfig gait;
  CurriculumConfig curriculum;
  double action_scale = 0.5;
  double action_clip = 3.0;
  double max_episode_s = 20.0;
  double fall_height_frac = 0.5;  // terminate below this fraction of the nominal height
  double fall_pitch = 1.0;
  int latent_dim = 64;            // z length when no motion prior is loaded
  int window = 50;                // ring length when no motion prior is loaded
  double push_vel = 0.0;          // 0 disables pushes
  double push_interval = 5.0;
  double speed_factor = 1.0;
  std::optional<double> fixed_alpha;     // overrides the curriculum (evaluation uses 1)
  std::optional<Command> fixed_command;  // overrides command sampling
  bool standing_only = false;
};

// Per-control-step log of one episode.
struct Trajectory {
  std::string clip_id;
  double dt_control = 0.02;
  double alpha = 1.0;
  Command command;
  std::vector<Vec> q, qdot;  // after each step
  std::vector<double> pitch, pitch_rate, vx;
  std::vector<Vec2> base_pos;
  std::vector<Vec> upper_target;  // commanded upper targets applied at each step
  std::vector<Vec> action;        // clipped lower-body policy actions
  std::vector<std::vector<bool>> contacts;
  std::vector<double> rewards;
  double survival = 0.0;
  bool failed = false;
  int steps() const { return static_cast<int>(q.size()); }
};

struct EnvStep {
  Vec obs;  // next observation (terminal observation when done)
  double reward = 0.0;
  bool done = false;
  bool timeout = false;
  bool failed = false;
  double survival = 0.0;
};

class LocoEnv {
 public:
  LocoEnv(const RobotModel& robot, const SimConfig& sim_config, const EnvConfig& config, const MotionDataset& dataset,
          const CVAEModel* prior, std::uint64_t seed)
      : sim_(robot, sim_config), config_(config), dataset_(&dataset), prior_(prior), rng_(seed) {
    if (dataset.clips.empty()) throw DatasetError("env: dataset has no clips");
    if (static_cast<int>(dataset.joint_names.size()) != robot.n_upper)
      throw CompatibilityError("env: dataset has " + std::to_string(dataset.joint_names.size()) +
                               " upper joints, robot has " + std::to_string(robot.n_upper));
    if (prior_ && prior_->n_upper != robot.n_upper) throw CompatibilityError("env: motion prior n_upper differs from the robot");
    H_ = prior_ ? prior_->config.H : config_.latent_dim;
    W_ = prior_ ? prior_->config.W : config_.window;
    max_steps_ = static_cast<int>(std::lround(config_.max_episode_s / sim_config.dt_control()));
    push_every_ = static_cast<int>(std::lround(config_.push_interval / sim_config.dt_control()));
  }

  int obs_dim() const { return observation_size(robot().n_lower, robot().n_upper, H_); }
  int act_dim() const { return robot().n_lower; }
  int latent_dim() const { return H_; }
  int max_steps() const { return max_steps_; }
  const RobotModel& robot() const { return sim_.robot(); }
  const PlanarSim& sim() const { return sim_; }
  const SimState& state() const { return state_; }
  const Trajectory& trajectory() const { return traj_; }
  const Vec& observation() const { return obs_; }
  int steps_taken() const { return k_; }
  double alpha() const { return alpha_; }
  const Command& command() const { return cmd_; }
  const MotionClip& clip() const { return *clip_; }
  const Vec& latent() const { return z_; }

  // Starts an episode. When clip_index is empty a clip is drawn uniformly.
  const Vec& reset(const CurriculumState* curriculum, std::optional<std::size_t> clip_index = std::nullopt) {
    std::uniform_int_distribution<std::size_t> pick(0, dataset_->clips.size() - 1);
    const std::size_t ci = clip_index ? *clip_index : pick(rng_);
    clip_ = &dataset_->clips.at(ci);
    const double nominal = robot().base.nominal_height;
    cmd_ = config_.fixed_command ? *config_.fixed_command
           : config_.standing_only ? standing_command(nominal)
                                   : sample_command(config_.commands, nominal, rng_);
    if (config_.fixed_alpha) {
      alpha_ = *config_.fixed_alpha;
    } else if (curriculum && curriculum->alpha.count(clip_->id)) {
      alpha_ = curriculum->alpha.at(clip_->id);
    } else {
      alpha_ = config_.curriculum.alpha_init;
    }
    state_ = sim_.initial_state();
    phase_ = 0.0;
    k_ = 0;
    a_prev_ = Vec::Zero(act_dim());
    ring_.reset(W_, robot().default_upper());
    traj_ = Trajectory{};
    traj_.clip_id = clip_->id;
    traj_.dt_control = sim_.config().dt_control();
    traj_.alpha = alpha_;
    traj_.command = cmd_;
    prepare();
    return obs_;
  }

  Vec lower_target(const Vec& action) const {
    const Vec a = action.cwiseMax(-config_.action_clip).cwiseMin(config_.action_clip);
    return robot().default_lower() + config_.action_scale * a;
  }

  EnvStep step(const Vec& action) {
    require_shape(action.size() == act_dim(), "env: action length mismatch");
    const Vec a = action.cwiseMax(-config_.action_clip).cwiseMin(config_.action_clip);
    const Vec target = robot().default_lower() + config_.action_scale * a;
    const SimState before = state_;
    EnvStep out;
    bool diverged = false;
    try {
      state_ = sim_.control_step(state_, target, upper_target_);
    } catch (const DivergenceError&) {
      diverged = true;
    }
    ++k_;
    const int nl = robot().n_lower;
    if (!diverged) {
      const double dtc = sim_.config().dt_control();
      const Vec qdd = (state_.qdot.head(nl) - before.qdot.head(nl)) / dtc;
      out.reward = reward(state_, cmd_, a, a_prev_, phase_, qdd, state_.last_torque.head(nl), config_.reward, config_.gait).total;
      phase_ = advance_phase(phase_, dtc, cmd_, config_.gait);
      record(a);
      if (config_.push_vel != 0.0 && push_every_ > 0 && k_ % push_every_ == 0 && k_ < max_steps_)
        state_ = apply_push(state_, config_.push_vel);
    }
    const double nominal = robot().base.nominal_height;
    out.failed = diverged || state_.base_pos.y() < config_.fall_height_frac * nominal || std::abs(state_.pitch) > config_.fall_pitch;
    out.timeout = !out.failed && k_ >= max_steps_;
    out.done = out.failed || out.timeout;
    out.survival = std::min(1.0, static_cast<double>(k_) / max_steps_);
    a_prev_ = a;
    if (out.done) {
      traj_.survival = out.survival;
      traj_.failed = out.failed;
      if (!diverged) obs_ = build_observation(state_, cmd_, phase_, z_, a_prev_);
    } else {
      prepare();
    }
    out.obs = obs_;
    traj_.rewards.push_back(out.reward);
    return out;
  }

 private:
  // Upper target for the coming step, latent from the commanded ring, observation.
  void prepare() {
    const double t = k_ * sim_.config().dt_control();
    const Vec raw = upper_target_at(*clip_, t, config_.speed_factor);
    upper_target_ = curriculum_target(robot().default_upper(), raw, alpha_);
    ring_.push(upper_target_);
    z_ = prior_ ? pmp_latent(*prior_, ring_) : Vec::Zero(H_);
    obs_ = build_observation(state_, cmd_, phase_, z_, a_prev_);
  }

  void record(const Vec& a) {
    traj_.q.push_back(state_.q);
    traj_.qdot.push_back(state_.qdot);
    traj_.pitch.push_back(state_.pitch);
    traj_.pitch_rate.push_back(state_.pitch_rate);
    traj_.vx.push_back(state_.base_vel.x());
    traj_.base_pos.push_back(state_.base_pos);
    traj_.upper_target.push_back(upper_target_);
    traj_.action.push_back(a);
    traj_.contacts.push_back(state_.foot_contact);
  }

  PlanarSim sim_;
  EnvConfig config_;
  const MotionDataset* dataset_;
  const CVAEModel* prior_;
  std::mt19937_64 rng_;
  int H_ = 64, W_ = 50, max_steps_ = 1000, push_every_ = 250;

  const MotionClip* clip_ = nullptr;
  SimState state_;
  Command cmd_;
  double alpha_ = 0.1;
  double phase_ = 0.0;
  int k_ = 0;
  Vec a_prev_, upper_target_, z_, obs_;
  TargetRing ring_;
  Trajectory traj_;
};

struct TrainConfig {
  PPOConfig ppo;
  PolicyConfig policy;
  EnvConfig env;
  SimConfig sim;
  int iterations = 200;
};

struct TrainLogRow {
  int iter = 0;
  double mean_reward = 0.0;
  double mean_survival = 0.0;
  double mean_alpha = 0.0;
  PPOStats stats;
};

inline const char* kTrainLogHeader = "iter,mean_reward,mean_survival,mean_alpha,policy_loss,value_loss,entropy,clip_frac,approx_kl";

inline std::string format_log_row(const TrainLogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.iter, r.mean_reward, r.mean_survival,
                r.mean_alpha, r.stats.policy_loss, r.stats.value_loss, r.stats.entropy, r.stats.clip_frac, r.stats.approx_kl);
  return buf;
}

struct TrainResult {
  PolicyModel policy;
  PolicyMeta meta;
  std::vector<TrainLogRow> log;
  CurriculumState curriculum;
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

// Rollouts over n_envs environments in fixed index order, then PPO. With
// prior == nullptr the latent slot of the observation is all zeros.
inline TrainResult train_policy(const RobotModel& robot, const MotionDataset& dataset, const CVAEModel* prior,
                                const TrainConfig& config, const TrainCallback& on_iter = {}) {
  const auto& pc = config.ppo;
  pc.validate();
  EnvConfig ec = config.env;
  ec.max_episode_s = pc.max_episode_s;
  std::vector<LocoEnv> envs;
  for (int e = 0; e < pc.n_envs; ++e)
    envs.emplace_back(robot, config.sim, ec, dataset, prior, pc.seed * 7919 + static_cast<std::uint64_t>(e) + 1);
  const int obs_dim = envs.front().obs_dim(), act_dim = envs.front().act_dim();

  TrainResult out;
  out.policy = make_policy(obs_dim, act_dim, config.policy, pc.seed);
  out.meta = {envs.front().latent_dim(), robot.n_lower, robot.n_upper, ec.action_scale, ec.action_clip, prior != nullptr};
  out.curriculum = CurriculumState::init(dataset.ids(), ec.curriculum);
  auto opt = make_policy_optimizer(out.policy, pc.learning_rate);
  std::mt19937_64 rng(pc.seed ^ 0x5bd1e995ull);
  std::normal_distribution<double> normal(0.0, 1.0);

  Mat obs(pc.n_envs, obs_dim);
  for (int e = 0; e < pc.n_envs; ++e) obs.row(e) = envs[static_cast<std::size_t>(e)].reset(&out.curriculum).transpose();

  const int T = pc.horizon, N = pc.n_envs;
  for (int it = 0; it < config.iterations; ++it) {
    Mat b_obs(T * N, obs_dim), b_act(T * N, act_dim);
    Vec b_logp(T * N);
    Mat values(T + 1, N);
    std::vector<std::vector<bool>> dones(static_cast<std::size_t>(N), std::vector<bool>(static_cast<std::size_t>(T)));
    Mat rew(T, N);
    std::vector<double> ended;
    double raw_reward = 0.0;
    const Vec ls = out.policy.log_sigma();
    const Vec sigma = ls.array().exp();

    for (int t = 0; t < T; ++t) {
      const Mat mean = mlp_forward(out.policy.actor, obs).y;
      const Mat v = mlp_forward(out.policy.critic, obs).y;
      values.row(t) = v.col(0).transpose();
      Mat next_obs = obs;
      std::vector<int> timeouts;
      Mat terminal(N, obs_dim);
      for (int e = 0; e < N; ++e) {
        Vec a(act_dim);
        for (int j = 0; j < act_dim; ++j) a[j] = mean(e, j) + sigma[j] * normal(rng);
        const int row = t * N + e;
        b_obs.row(row) = obs.row(e);
        b_act.row(row) = a.transpose();
        b_logp[row] = gaussian_log_prob(a, mean.row(e).transpose(), ls);
        auto& env = envs[static_cast<std::size_t>(e)];
        const auto r = env.step(a);
        rew(t, e) = r.reward;
        raw_reward += r.reward;
        dones[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)] = r.done;
        if (r.done) {
          ended.push_back(r.survival);
          auto& alpha = out.curriculum.alpha[env.clip().id];
          if (!ec.fixed_alpha) alpha = curriculum_update(alpha, r.survival, ec.curriculum);
          if (r.timeout) {
            timeouts.push_back(e);
            terminal.row(e) = r.obs.transpose();
          }
          next_obs.row(e) = env.reset(&out.curriculum).transpose();
        } else {
          next_obs.row(e) = r.obs.transpose();
        }
      }
      // Time limits are not failures: bootstrap the value of the final state.
      if (!timeouts.empty()) {
        Mat term(static_cast<Eigen::Index>(timeouts.size()), obs_dim);
        for (std::size_t i = 0; i < timeouts.size(); ++i) term.row(static_cast<Eigen::Index>(i)) = terminal.row(timeouts[i]);
        const Mat tv = mlp_forward(out.policy.critic, term).y;
        for (std::size_t i = 0; i < timeouts.size(); ++i) rew(t, timeouts[i]) += pc.gamma * tv(static_cast<Eigen::Index>(i), 0);
      }
      obs = next_obs;
    }
    values.row(T) = mlp_forward(out.policy.critic, obs).y.col(0).transpose();

    Vec b_adv(T * N), b_ret(T * N);
    for (int e = 0; e < N; ++e) {
      const auto g = gae(rew.col(e), values.col(e), dones[static_cast<std::size_t>(e)], pc.gamma, pc.lambda);
      for (int t = 0; t < T; ++t) {
        b_adv[t * N + e] = g.advantages[t];
        b_ret[t * N + e] = g.returns[t];
      }
    }

    TrainLogRow row;
    row.iter = it;
    row.mean_reward = raw_reward / static_cast<double>(T * N);  // excludes the timeout bootstrap
    if (!ended.empty()) {
      row.mean_survival = std::accumulate(ended.begin(), ended.end(), 0.0) / static_cast<double>(ended.size());
    } else {
      double s = 0.0;
      for (const auto& env : envs) s += static_cast<double>(env.steps_taken()) / env.max_steps();
      row.mean_survival = s / N;
    }
    row.stats = ppo_update(out.policy, PPOBatch{b_obs, b_act, b_logp, b_adv, b_ret}, pc, opt, rng);
    row.mean_alpha = out.curriculum.mean();
    out.log.push_back(row);
    if (on_iter) on_iter(row);
  }
  return out;
}

}  // namespace pmp
