#pragma once

#include "pmp/checkpoint.hpp"
#include "pmp/nn.hpp"
#include "pmp/sim.hpp"

#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pmp {

struct Command {
  double vx = 0.0;
  double h = 0.0;
  double pitch = 0.0;
};

struct CommandRanges {
  double vx_min = -0.8, vx_max = 1.2;
  double h_min_frac = 0.85, h_max_frac = 1.0;  // of the nominal base height
  double pitch_min = -0.2, pitch_max = 0.2;
};

inline Command sample_command(const CommandRanges& r, double nominal_height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Command c;
  c.vx = r.vx_min + (r.vx_max - r.vx_min) * u(rng);
  c.h = nominal_height * (r.h_min_frac + (r.h_max_frac - r.h_min_frac) * u(rng));
  c.pitch = r.pitch_min + (r.pitch_max - r.pitch_min) * u(rng);
  return c;
}

inline Command clamp_command(const Command& c, const CommandRanges& r, double nominal_height) {
  return {std::clamp(c.vx, r.vx_min, r.vx_max),
          std::clamp(c.h, r.h_min_frac * nominal_height, r.h_max_frac * nominal_height),
          std::clamp(c.pitch, r.pitch_min, r.pitch_max)};
}

inline Command standing_command(double nominal_height) { return {0.0, nominal_height, 0.0}; }

inline int observation_size(int n_lower, int n_upper, int H) { return 2 * (n_lower + n_upper) + 1 + 2 + n_lower + 2 + 3 + H; }

// [q, qdot, pitch_rate, g, a_prev, sin 2pi phi, cos 2pi phi, vx, h, pitch, z]
inline Vec build_observation(const SimState& s, const Command& cmd, double phase, const Vec& z, const Vec& a_prev) {
  const auto nj = s.q.size(), nl = a_prev.size();
  Vec o(2 * nj + 1 + 2 + nl + 2 + 3 + z.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < nj; ++i) o[k++] = wrap_angle(s.q[i]);
  o.segment(k, nj) = s.qdot;
  k += nj;
  o[k++] = s.pitch_rate;
  const Vec2 g = projected_gravity(s.pitch);
  o[k++] = g.x();
  o[k++] = g.y();
  o.segment(k, nl) = a_prev;
  k += nl;
  o[k++] = std::sin(2.0 * kPi * phase);
  o[k++] = std::cos(2.0 * kPi * phase);
  o[k++] = cmd.vx;
  o[k++] = cmd.h;
  o[k++] = cmd.pitch;
  o.segment(k, z.size()) = z;
  return o;
}

struct RewardWeights {
  double lin_vel = 1.0;
  double height = 0.5;
  double orient = 0.5;
  double gait = 0.5;
  double action_rate = -0.01;
  double joint_acc = -2.5e-7;
  double torque = -1e-5;
  double alive = 0.2;
};

struct GaitConfig {
  double period = 0.8;             // seconds per left/right cycle
  double standing_threshold = 0.1;  // |vx_cmd| below this means both feet in stance
};

inline bool standing_mode(const Command& c, const GaitConfig& g) { return std::abs(c.vx) < g.standing_threshold; }

// Desired stance per foot: left while phi in [0, 0.5), right while phi in [0.5, 1).
inline std::array<bool, 2> desired_stance(double phase, bool standing) {
  if (standing) return {true, true};
  return {phase < 0.5, phase >= 0.5};
}

inline double advance_phase(double phase, double dt_control, const Command& c, const GaitConfig& g) {
  if (standing_mode(c, g)) return phase;
  return std::fmod(phase + dt_control / g.period, 1.0);
}

struct RewardTerms {
  double total = 0.0;
  std::map<std::string, double> terms;
};

inline RewardTerms reward(const SimState& next, const Command& cmd, const Vec& action, const Vec& a_prev,
                          double phase, const Vec& qdd_lower, const Vec& tau_lower, const RewardWeights& w,
                          const GaitConfig& gait) {
  RewardTerms r;
  const double ev = cmd.vx - next.base_vel.x();
  const double eh = cmd.h - next.base_pos.y();
  const double ep = cmd.pitch - next.pitch;
  const auto want = desired_stance(phase, standing_mode(cmd, gait));
  double match = 0.0;
  for (std::size_t f = 0; f < 2 && f < next.foot_contact.size(); ++f) match += (next.foot_contact[f] == want[f]) ? 0.5 : 0.0;
  r.terms["lin_vel"] = w.lin_vel * std::exp(-ev * ev / 0.25);
  r.terms["height"] = w.height * std::exp(-eh * eh / 0.01);
  r.terms["orient"] = w.orient * std::exp(-ep * ep / 0.04);
  r.terms["gait"] = w.gait * match;
  r.terms["action_rate"] = w.action_rate * (action - a_prev).squaredNorm();
  r.terms["joint_acc"] = w.joint_acc * qdd_lower.squaredNorm();
  r.terms["torque"] = w.torque * tau_lower.squaredNorm();
  r.terms["alive"] = w.alive;
  for (const auto& [k, v] : r.terms) r.total += v;
  return r;
}

struct CurriculumConfig {
  double alpha_init = 0.1;
  double alpha_min = 0.1;
  double up = 0.05;
  double down = 0.01;
  double survival_threshold = 0.9;
};

inline Vec curriculum_target(const Vec& q0_upper, const Vec& q_target_upper, double alpha) {
  require_shape(q0_upper.size() == q_target_upper.size(), "curriculum_target: length mismatch");
  return q0_upper + alpha * (q_target_upper - q0_upper);
}

inline double curriculum_update(double alpha, double survival_fraction, const CurriculumConfig& c = {}) {
  const double next = survival_fraction >= c.survival_threshold ? alpha + c.up : alpha - c.down;
  return std::clamp(next, c.alpha_min, 1.0);
}

struct CurriculumState {
  std::map<std::string, double> alpha;

  static CurriculumState init(const std::vector<std::string>& ids, const CurriculumConfig& c) {
    CurriculumState s;
    for (const auto& id : ids) s.alpha[id] = std::clamp(c.alpha_init, c.alpha_min, 1.0);
    return s;
  }
  double mean() const {
    if (alpha.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [k, v] : alpha) sum += v;
    return sum / static_cast<double>(alpha.size());
  }
};

struct GaeResult {
  Vec advantages;
  Vec returns;
};

// values has one more entry than rewards: the bootstrap value of the final state.
inline GaeResult gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones, double gamma, double lambda) {
  const auto T = rewards.size();
  if (values.size() != T + 1 || static_cast<Eigen::Index>(dones.size()) != T)
    throw ShapeError("gae: need |values| = |rewards| + 1 = |dones| + 1");
  GaeResult r{Vec(T), Vec(T)};
  double next_adv = 0.0;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[t] = next_adv;
  }
  r.returns = r.advantages + values.head(T);
  return r;
}

struct PolicyConfig {
  std::vector<int> actor_hidden{256, 256};
  std::vector<int> critic_hidden{256, 256};
  Activation activation = Activation::elu;
  double init_log_std = -1.6;
  double output_init_scale = 0.01;  // shrinks the actor's last layer so initial actions are near zero
};

struct PolicyModel {
  Mlp actor;
  Mlp critic;
  ParamStore log_std;  // single tensor "log_std", state-independent
  int obs_dim = 0;
  int act_dim = 0;

  Vec log_sigma() const { return log_std.vector("log_std"); }
};

inline PolicyModel make_policy(int obs_dim, int act_dim, const PolicyConfig& c, std::uint64_t seed) {
  PolicyModel p;
  p.obs_dim = obs_dim;
  p.act_dim = act_dim;
  p.actor = mlp_init({obs_dim, act_dim, c.actor_hidden, c.activation}, seed * 2 + 101);
  p.critic = mlp_init({obs_dim, 1, c.critic_hidden, c.activation}, seed * 2 + 102);
  const auto last = weight_name(p.actor.config.layers() - 1);
  for (auto& v : p.actor.params.mutable_at(last).values) v *= c.output_init_scale;
  p.log_std.add("log_std", {act_dim}, std::vector<double>(static_cast<std::size_t>(act_dim), c.init_log_std));
  return p;
}

struct PolicyOutput {
  Vec mean;
  Vec log_sigma;
  double value = 0.0;
};

inline PolicyOutput policy_forward(const PolicyModel& p, const Vec& obs) {
  require_shape(obs.size() == p.obs_dim, "policy_forward: observation length " + std::to_string(obs.size()) +
                                             " != " + std::to_string(p.obs_dim));
  return {mlp_apply(p.actor, obs), p.log_sigma(), mlp_apply(p.critic, obs)[0]};
}

inline double gaussian_log_prob(const Vec& a, const Vec& mean, const Vec& log_sigma) {
  const double half_log_2pi = 0.5 * std::log(2.0 * kPi);
  double lp = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double u = (a[j] - mean[j]) * std::exp(-log_sigma[j]);
    lp += -0.5 * u * u - log_sigma[j] - half_log_2pi;
  }
  return lp;
}

inline double gaussian_entropy(const Vec& log_sigma) {
  return (log_sigma.array() + 0.5 * std::log(2.0 * kPi * std::exp(1.0))).sum();
}

struct PPOConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 5;
  int minibatches = 4;
  int horizon = 48;
  int n_envs = 16;
  double entropy_coef = 0.005;
  double value_coef = 1.0;
  double learning_rate = 3e-4;
  double max_grad_norm = 1.0;
  double max_episode_s = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0 && lambda > 0.0 && lambda <= 1.0)) throw ArgumentError("ppo: gamma and lambda must lie in (0, 1]");
    if (!(clip > 0.0)) throw ArgumentError("ppo: clip must be > 0");
    if (epochs < 1 || minibatches < 1 || horizon < 1 || n_envs < 1) throw ArgumentError("ppo: epochs, minibatches, horizon, n_envs must be >= 1");
  }
};

struct PPOBatch {
  Mat obs;        // rows are samples
  Mat actions;
  Vec old_log_prob;
  Vec advantages;  // already normalized
  Vec returns;
};

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
};

struct PPOLoss {
  double loss = 0.0;
  PPOStats stats;
  ParamStore actor_grad;
  ParamStore critic_grad;
  ParamStore log_std_grad;
};

// Clipped surrogate + value_coef * MSE(V, R) - entropy_coef * entropy.
inline PPOLoss ppo_loss(const PolicyModel& p, const PPOBatch& b, const PPOConfig& c) {
  const Eigen::Index B = b.obs.rows();
  if (B == 0) throw ShapeError("ppo_loss: empty batch");
  const int A = p.act_dim;
  const auto af = mlp_forward(p.actor, b.obs);
  const auto cf = mlp_forward(p.critic, b.obs);
  const Vec ls = p.log_sigma();
  const Vec inv_var = (-2.0 * ls.array()).exp();

  Mat d_mean = Mat::Zero(B, A);
  Vec d_ls = Vec::Zero(A);
  Mat d_value(B, 1);
  PPOLoss out;
  double surr = 0.0, vloss = 0.0, clipped = 0.0, kl = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Vec a = b.actions.row(i).transpose();
    const Vec mu = af.y.row(i).transpose();
    const double lp = gaussian_log_prob(a, mu, ls);
    const double log_ratio = lp - b.old_log_prob[i];
    const double ratio = std::exp(log_ratio);
    const double adv = b.advantages[i];
    const double unclipped = ratio * adv;
    const double clipped_v = std::clamp(ratio, 1.0 - c.clip, 1.0 + c.clip) * adv;
    surr += std::min(unclipped, clipped_v);
    if (std::abs(ratio - 1.0) > c.clip) clipped += 1.0;
    kl += (ratio - 1.0) - log_ratio;
    // The min picks the unclipped branch unless the ratio has left the trust
    // region in the direction the advantage rewards.
    const bool active = unclipped <= clipped_v;
    if (active) {
      const double g = -adv * ratio * inv_b;  // d loss / d log_prob
      const Vec diff = a - mu;
      d_mean.row(i) = (g * diff.cwiseProduct(inv_var)).transpose();
      d_ls += g * (diff.cwiseAbs2().cwiseProduct(inv_var) - Vec::Ones(A));
    }
    const double ev = cf.y(i, 0) - b.returns[i];
    vloss += ev * ev;
    d_value(i, 0) = 2.0 * c.value_coef * ev * inv_b;
  }
  const double ent = gaussian_entropy(ls);
  d_ls -= c.entropy_coef * Vec::Ones(A);

  out.stats.policy_loss = -surr * inv_b;
  out.stats.value_loss = vloss * inv_b;
  out.stats.entropy = ent;
  out.stats.clip_frac = clipped * inv_b;
  out.stats.approx_kl = kl * inv_b;
  out.loss = out.stats.policy_loss + c.value_coef * out.stats.value_loss - c.entropy_coef * ent;
  out.actor_grad = mlp_backward(p.actor, af.tape, d_mean).grads;
  out.critic_grad = mlp_backward(p.critic, cf.tape, d_value).grads;
  out.log_std_grad.add("log_std", {A}, std::vector<double>(d_ls.data(), d_ls.data() + A));
  return out;
}

inline ParamStore merge_policy(const ParamStore& actor, const ParamStore& critic, const ParamStore& log_std) {
  ParamStore all;
  all.merge("actor.", actor);
  all.merge("critic.", critic);
  all.merge("", log_std);
  return all;
}

inline void split_policy(const ParamStore& all, PolicyModel& p) {
  p.actor.params = all.extract("actor.");
  p.critic.params = all.extract("critic.");
  ParamStore ls;
  ls.add("log_std", all.at("log_std").shape, all.at("log_std").values);
  p.log_std = std::move(ls);
}

// Minibatched clipped-surrogate epochs over one rollout. Advantages are
// normalized over the whole batch before the epochs.
inline PPOStats ppo_update(PolicyModel& p, PPOBatch batch, const PPOConfig& c, OptimizerState& opt, std::mt19937_64& rng) {
  const Eigen::Index n = batch.obs.rows();
  if (n == 0) throw ShapeError("ppo_update: empty rollout buffer");
  const double mean_adv = batch.advantages.mean();
  const double std_adv = std::sqrt((batch.advantages.array() - mean_adv).square().mean());
  batch.advantages = (batch.advantages.array() - mean_adv) / (std_adv + 1e-8);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index mb = std::max<Eigen::Index>(1, n / c.minibatches);
  PPOStats acc;
  int count = 0;
  for (int e = 0; e < c.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index s = 0; s + mb <= n; s += mb) {
      PPOBatch m{Mat(mb, batch.obs.cols()), Mat(mb, batch.actions.cols()), Vec(mb), Vec(mb), Vec(mb)};
      for (Eigen::Index i = 0; i < mb; ++i) {
        const auto k = order[static_cast<std::size_t>(s + i)];
        m.obs.row(i) = batch.obs.row(k);
        m.actions.row(i) = batch.actions.row(k);
        m.old_log_prob[i] = batch.old_log_prob[k];
        m.advantages[i] = batch.advantages[k];
        m.returns[i] = batch.returns[k];
      }
      auto l = ppo_loss(p, m, c);
      if (!std::isfinite(l.loss)) throw TrainingError("ppo_update: non-finite loss (policy " + std::to_string(l.stats.policy_loss) +
                                                      ", value " + std::to_string(l.stats.value_loss) + ")");
      auto grads = merge_policy(l.actor_grad, l.critic_grad, l.log_std_grad);
      const double norm = std::sqrt(squared_norm(grads));
      if (c.max_grad_norm > 0.0 && norm > c.max_grad_norm) scale_in_place(grads, c.max_grad_norm / norm);
      auto params = merge_policy(p.actor.params, p.critic.params, p.log_std);
      optimizer_step(params, grads, opt);
      split_policy(params, p);
      acc.policy_loss += l.stats.policy_loss;
      acc.value_loss += l.stats.value_loss;
      acc.entropy += l.stats.entropy;
      acc.clip_frac += l.stats.clip_frac;
      acc.approx_kl += l.stats.approx_kl;
      ++count;
    }
  }
  const double k = 1.0 / std::max(count, 1);
  acc.policy_loss *= k;
  acc.value_loss *= k;
  acc.entropy *= k;
  acc.clip_frac *= k;
  acc.approx_kl *= k;
  return acc;
}

inline OptimizerState make_policy_optimizer(const PolicyModel& p, double lr) {
  return make_optimizer(merge_policy(p.actor.params, p.critic.params, p.log_std), AdamConfig{lr});
}

struct PolicyMeta {
  int H = 0;
  int n_lower = 0;
  int n_upper = 0;
  double action_scale = 0.5;
  double action_clip = 3.0;
  bool uses_prior = true;
};

inline void save_policy(const PolicyModel& p, const PolicyMeta& m, const std::string& path) {
  nlohmann::json meta{{"kind", "policy"},
                      {"obs_dim", p.obs_dim},
                      {"act_dim", p.act_dim},
                      {"H", m.H},
                      {"n_lower", m.n_lower},
                      {"n_upper", m.n_upper},
                      {"action_scale", m.action_scale},
                      {"action_clip", m.action_clip},
                      {"uses_prior", m.uses_prior},
                      {"actor", mlp_config_json(p.actor.config)},
                      {"critic", mlp_config_json(p.critic.config)}};
  save_checkpoint(path, merge_policy(p.actor.params, p.critic.params, p.log_std), meta);
}

inline std::pair<PolicyModel, PolicyMeta> load_policy(const std::string& path) {
  auto ck = load_checkpoint(path);
  const auto& meta = ck.meta;
  if (!meta.contains("kind") || meta.at("kind") != "policy") throw CompatibilityError(path + ": not a policy checkpoint");
  PolicyModel p;
  PolicyMeta m;
  p.obs_dim = json_util::get<int>(meta, "obs_dim", path);
  p.act_dim = json_util::get<int>(meta, "act_dim", path);
  m.H = json_util::get<int>(meta, "H", path);
  m.n_lower = meta.value("n_lower", p.act_dim);
  m.n_upper = meta.value("n_upper", 0);
  m.action_scale = meta.value("action_scale", 0.5);
  m.action_clip = meta.value("action_clip", 3.0);
  m.uses_prior = meta.value("uses_prior", true);
  p.actor.config = mlp_config_from_json(json_util::field(meta, "actor", path), path + ": actor");
  p.critic.config = mlp_config_from_json(json_util::field(meta, "critic", path), path + ": critic");
  if (p.actor.config.in_dim != p.obs_dim || p.actor.config.out_dim != p.act_dim || p.critic.config.in_dim != p.obs_dim)
    throw CompatibilityError(path + ": network dimensions disagree with obs_dim/act_dim");
  const auto fresh_actor = mlp_init(p.actor.config, 0), fresh_critic = mlp_init(p.critic.config, 0);
  auto actor = ck.params.extract("actor."), critic = ck.params.extract("critic.");
  if (!actor.same_layout(fresh_actor.params) || !critic.same_layout(fresh_critic.params) || !ck.params.contains("log_std"))
    throw CompatibilityError(path + ": tensor layout does not match the network configs");
  p.actor.params = std::move(actor);
  p.critic.params = std::move(critic);
  p.log_std.add("log_std", ck.params.at("log_std").shape, ck.params.at("log_std").values);
  return {std::move(p), m};
}

}  // namespace pmp
