#pragma once

#include "pmp/common.hpp"
#include "pmp/robot.hpp"

#include <Eigen/Cholesky>

#include <string>
#include <vector>

namespace pmp {

struct GroundParams {
  double stiffness = 2e4;   // N/m, normal
  double damping = 1e2;     // N s/m, normal
  double friction = 1.0;
  double tangential_stiffness = 2e4;
  double tangential_damping = 20.0;  // 1e2 chatters on the light feet at dt=1/200
};

struct PdGains {
  Vec kp;
  Vec kd;
};

struct SimConfig {
  double dt_physics = 1.0 / 200.0;
  int control_decimation = 4;
  double gravity = 9.81;
  GroundParams ground;
  PdGains gains;            // per joint; empty means the defaults below
  double kp_lower = 80.0, kd_lower = 2.0;
  double kp_upper = 40.0, kd_upper = 1.0;
  bool contact_enabled = true;
  bool fixed_base = false;  // base pose pinned, only the joints move
  bool momentum_projection = true;

  double dt_control() const { return dt_physics * control_decimation; }
  void validate() const {
    if (!(dt_physics > 0.0)) throw ArgumentError("sim: dt_physics must be > 0");
    if (control_decimation < 1) throw ArgumentError("sim: control_decimation must be >= 1");
  }
};

struct Perturbation {
  enum class Kind { push };
  Kind kind = Kind::push;
  double push_vel = 0.0;
  double interval = 5.0;
};

struct SimState {
  Vec2 base_pos{0.0, 0.0};  // (x, z)
  double pitch = 0.0;
  Vec2 base_vel{0.0, 0.0};
  double pitch_rate = 0.0;
  Vec q;
  Vec qdot;
  std::vector<bool> foot_contact;
  double time = 0.0;

  // Tangential contact anchors, one per contact point.
  std::vector<double> anchor_x;
  std::vector<bool> anchored;
  Vec last_torque;  // joint torques applied during the last physics step

  Vec gen_pos() const {
    Vec g(3 + q.size());
    g << base_pos.x(), base_pos.y(), pitch, q;
    return g;
  }
  Vec gen_vel() const {
    Vec g(3 + qdot.size());
    g << base_vel.x(), base_vel.y(), pitch_rate, qdot;
    return g;
  }
  void set_gen_vel(const Vec& v) {
    base_vel = {v[0], v[1]};
    pitch_rate = v[2];
    qdot = v.tail(v.size() - 3);
  }
  bool finite() const {
    return base_pos.allFinite() && std::isfinite(pitch) && base_vel.allFinite() && std::isfinite(pitch_rate) &&
           q.allFinite() && qdot.allFinite();
  }
};

inline Vec pd_torque(const Vec& q_target, const Vec& q, const Vec& qdot, const Vec& kp, const Vec& kd,
                     const Vec& torque_limit) {
  require_shape(q_target.size() == q.size() && qdot.size() == q.size() && kp.size() == q.size() &&
                    kd.size() == q.size() && torque_limit.size() == q.size(),
                "pd_torque: length mismatch");
  Vec tau = kp.cwiseProduct(q_target - q) - kd.cwiseProduct(qdot);
  return tau.cwiseMax(-torque_limit).cwiseMin(torque_limit);
}

// Unit gravity in the base frame.
inline Vec2 projected_gravity(double pitch) { return {-std::sin(pitch), -std::cos(pitch)}; }

inline SimState apply_push(SimState s, double push_vel) {
  s.base_vel.x() = push_vel;
  return s;
}

// World-frame joint origins and link angles for a configuration.
struct LinkFrames {
  Vec2 base_origin;
  double base_angle = 0.0;
  std::vector<Vec2> origin;  // joint i location
  std::vector<double> angle;
};

inline LinkFrames link_frames(const RobotModel& robot, const Vec2& base_pos, double pitch, const Vec& q) {
  require_shape(q.size() == robot.n_joints(), "forward_kinematics: q length mismatch");
  LinkFrames f;
  f.base_origin = base_pos;
  f.base_angle = pitch;
  const auto n = robot.links.size();
  f.origin.resize(n);
  f.angle.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = robot.links[i];
    const Vec2 po = l.parent < 0 ? base_pos : f.origin[static_cast<std::size_t>(l.parent)];
    const double pa = l.parent < 0 ? pitch : f.angle[static_cast<std::size_t>(l.parent)];
    f.origin[i] = po + rotate(pa, l.attach);
    f.angle[i] = pa + q[static_cast<Eigen::Index>(i)];
  }
  return f;
}

// Tip of each keypoint link (elbows, wrists and soles for the default model).
inline std::vector<Vec2> forward_kinematics(const RobotModel& robot, const Vec2& base_pos, double pitch, const Vec& q) {
  const auto f = link_frames(robot, base_pos, pitch, q);
  std::vector<Vec2> out;
  for (int k : robot.keypoint_joints) {
    const auto i = static_cast<std::size_t>(k);
    out.push_back(f.origin[i] + rotate(f.angle[i], robot.links[i].tip()));
  }
  return out;
}

struct ContactForce {
  int link = 0;
  Vec2 point;
  Vec2 force;
  double penetration = 0.0;
};

class PlanarSim {
 public:
  PlanarSim(RobotModel robot, SimConfig config) : robot_(std::move(robot)), config_(std::move(config)) {
    robot_.validate();
    config_.validate();
    const int n = robot_.n_joints();
    if (config_.gains.kp.size() == 0) {
      config_.gains.kp.resize(n);
      config_.gains.kd.resize(n);
      for (int i = 0; i < n; ++i) {
        const bool up = robot_.joints[static_cast<std::size_t>(i)].is_upper;
        config_.gains.kp[i] = up ? config_.kp_upper : config_.kp_lower;
        config_.gains.kd[i] = up ? config_.kd_upper : config_.kd_lower;
      }
    }
    require_shape(config_.gains.kp.size() == n && config_.gains.kd.size() == n, "sim: gains must have one entry per joint");
    torque_limit_ = robot_.torque_limits();
    chain_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      for (int k = i; k >= 0; k = robot_.links[static_cast<std::size_t>(k)].parent) chain_[static_cast<std::size_t>(i)].push_back(k);
    for (int i = 0; i < n; ++i)
      for (const auto& c : robot_.links[static_cast<std::size_t>(i)].contacts) contact_points_.push_back({i, c});
    for (int f : robot_.foot_links()) feet_.push_back(f);
  }

  const RobotModel& robot() const { return robot_; }
  const SimConfig& config() const { return config_; }
  int n_dof() const { return 3 + robot_.n_joints(); }
  int n_contact_points() const { return static_cast<int>(contact_points_.size()); }

  // Default pose with the lowest contact point touching the ground.
  SimState initial_state(const Vec& q, double pitch = 0.0) const {
    SimState s;
    s.q = q;
    s.qdot = Vec::Zero(q.size());
    s.pitch = pitch;
    s.base_pos = {0.0, 0.0};
    double lowest = 0.0;
    bool any = false;
    const auto f = link_frames(robot_, s.base_pos, pitch, q);
    for (const auto& cp : contact_points_) {
      const double z = point_world(f, cp.link, cp.local).y();
      lowest = any ? std::min(lowest, z) : z;
      any = true;
    }
    s.base_pos.y() = any ? -lowest : robot_.base.nominal_height;
    s.anchor_x.assign(contact_points_.size(), 0.0);
    s.anchored.assign(contact_points_.size(), false);
    s.foot_contact.assign(feet_.size(), false);
    s.last_torque = Vec::Zero(q.size());
    return s;
  }
  SimState initial_state() const { return initial_state(robot_.default_q()); }

  // Generalized mass matrix: sum over bodies of m J^T J + I j^T j, plus armature.
  Mat mass_matrix(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    return mass_matrix(f);
  }

  // Generalized bias (Coriolis, centrifugal, gravity): M qdd + h = Q.
  Vec bias_forces(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    return bias_forces(f, s);
  }

  double kinetic_energy(const SimState& s) const {
    const Vec v = s.gen_vel();
    return 0.5 * v.dot(mass_matrix(s) * v);
  }

  double potential_energy(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    double pe = robot_.base.mass * config_.gravity * base_com(f).y();
    for (std::size_t i = 0; i < robot_.links.size(); ++i) pe += robot_.links[i].mass * config_.gravity * link_com(f, static_cast<int>(i)).y();
    return pe;
  }

  // Elastic energy stored in the contact springs.
  double contact_energy(const SimState& s) const {
    if (!config_.contact_enabled) return 0.0;
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    double e = 0.0;
    for (std::size_t c = 0; c < contact_points_.size(); ++c) {
      const Vec2 p = point_world(f, contact_points_[c].link, contact_points_[c].local);
      if (p.y() < 0.0) {
        e += 0.5 * config_.ground.stiffness * p.y() * p.y();
        if (c < s.anchored.size() && s.anchored[c]) {
          const double dx = p.x() - s.anchor_x[c];
          e += 0.5 * config_.ground.tangential_stiffness * dx * dx;
        }
      }
    }
    return e;
  }

  double energy(const SimState& s) const { return kinetic_energy(s) + potential_energy(s) + contact_energy(s); }

  Vec2 com_position(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    return com_position(f);
  }

  // Total linear momentum and angular momentum about the COM.
  std::pair<Vec2, double> momentum(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    return momentum(f, s.gen_vel());
  }

  std::vector<ContactForce> contact_forces(const SimState& s) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    SimState tmp = s;
    return compute_contacts(f, s, tmp);
  }

  // One physics step. Lower torques are applied as given; the upper body is
  // PD-driven toward upper_q_target.
  SimState step(const SimState& s, const Vec& lower_torques, const Vec& upper_q_target) const {
    const int nl = robot_.n_lower, nu = robot_.n_upper, nj = robot_.n_joints();
    require_shape(lower_torques.size() == nl, "step: lower torque length " + std::to_string(lower_torques.size()) +
                                                 " != n_lower " + std::to_string(nl));
    require_shape(upper_q_target.size() == nu, "step: upper target length mismatch");
    require_shape(s.q.size() == nj && s.qdot.size() == nj, "step: state joint count mismatch");

    Vec tau(nj);
    tau.head(nl) = lower_torques.cwiseMax(-torque_limit_.head(nl)).cwiseMin(torque_limit_.head(nl));
    tau.tail(nu) = pd_torque(upper_q_target, s.q.tail(nu), s.qdot.tail(nu), config_.gains.kp.tail(nu),
                             config_.gains.kd.tail(nu), torque_limit_.tail(nu));

    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    SimState next = s;
    next.last_torque = tau;
    const auto contacts = compute_contacts(f, s, next);

    const int n = n_dof();
    Vec Q = Vec::Zero(n);
    Q.tail(nj) = tau;
    Vec2 f_ext = Vec2::Zero();
    double torque_ext = 0.0;
    const Vec2 c0 = com_position(f);
    for (const auto& c : contacts) {
      Q += point_jacobian(f, c.link, c.point).transpose() * c.force;
      f_ext += c.force;
      torque_ext += cross2(c.point - c0, c.force);
    }

    const Mat M = mass_matrix(f);
    const Vec h = bias_forces(f, s);
    const Vec v0 = s.gen_vel();
    Vec v1 = v0;
    if (config_.fixed_base) {
      const Vec qdd = M.bottomRightCorner(nj, nj).ldlt().solve(Q.tail(nj) - h.tail(nj));
      v1.tail(nj) += config_.dt_physics * qdd;
      v1.head(3).setZero();
    } else {
      v1 += config_.dt_physics * M.ldlt().solve(Q - h);
    }

    next.set_gen_vel(v1);
    next.base_pos += config_.dt_physics * next.base_vel;
    next.pitch += config_.dt_physics * next.pitch_rate;
    next.q += config_.dt_physics * next.qdot;
    next.time = s.time + config_.dt_physics;

    if (!config_.fixed_base && config_.momentum_projection) {
      const auto [p0, l0] = momentum(f, v0);
      const double mt = robot_.total_mass();
      const Vec2 p_target = p0 + config_.dt_physics * (mt * Vec2(0.0, -config_.gravity) + f_ext);
      const double l_target = l0 + config_.dt_physics * torque_ext;
      project_momentum(next, p_target, l_target);
    }

    if (!next.finite())
      throw DivergenceError("sim: non-finite state at t=" + std::to_string(next.time));
    const auto f1 = link_frames(robot_, next.base_pos, next.pitch, next.q);
    next.foot_contact.assign(feet_.size(), false);
    for (std::size_t k = 0; k < feet_.size(); ++k)
      for (const auto& cp : contact_points_)
        if (cp.link == feet_[k] && point_world(f1, cp.link, cp.local).y() < 0.0) next.foot_contact[k] = true;
    return next;
  }

  // PD on both halves with targets held for control_decimation physics steps.
  SimState control_step(const SimState& s, const Vec& lower_q_target, const Vec& upper_q_target) const {
    const int nl = robot_.n_lower;
    require_shape(lower_q_target.size() == nl, "control_step: lower target length mismatch");
    SimState cur = s;
    for (int k = 0; k < config_.control_decimation; ++k) {
      const Vec tau = lower_pd(cur, lower_q_target);
      cur = step(cur, tau, upper_q_target);
    }
    return cur;
  }

  Vec lower_pd(const SimState& s, const Vec& lower_q_target) const {
    const int nl = robot_.n_lower;
    return pd_torque(lower_q_target, s.q.head(nl), s.qdot.head(nl), config_.gains.kp.head(nl),
                     config_.gains.kd.head(nl), torque_limit_.head(nl));
  }

 private:
  struct ContactPoint {
    int link;
    Vec2 local;
  };

  Vec2 point_world(const LinkFrames& f, int link, const Vec2& local) const {
    const auto i = static_cast<std::size_t>(link);
    return f.origin[i] + rotate(f.angle[i], local);
  }
  Vec2 link_com(const LinkFrames& f, int link) const {
    return point_world(f, link, robot_.links[static_cast<std::size_t>(link)].com());
  }
  Vec2 base_com(const LinkFrames& f) const { return f.base_origin + rotate(f.base_angle, robot_.base.com); }

  Vec2 com_position(const LinkFrames& f) const {
    Vec2 c = robot_.base.mass * base_com(f);
    for (std::size_t i = 0; i < robot_.links.size(); ++i) c += robot_.links[i].mass * link_com(f, static_cast<int>(i));
    return c / robot_.total_mass();
  }

  // 2 x n Jacobian of a world point rigidly attached to `link` (-1 is the base).
  Mat point_jacobian(const LinkFrames& f, int link, const Vec2& p) const {
    Mat J = Mat::Zero(2, n_dof());
    J(0, 0) = 1.0;
    J(1, 1) = 1.0;
    J.col(2) = perp(p - f.base_origin);
    if (link >= 0)
      for (int k : chain_[static_cast<std::size_t>(link)]) J.col(3 + k) = perp(p - f.origin[static_cast<std::size_t>(k)]);
    return J;
  }
  Vec angular_jacobian(int link) const {
    Vec j = Vec::Zero(n_dof());
    j[2] = 1.0;
    if (link >= 0)
      for (int k : chain_[static_cast<std::size_t>(link)]) j[3 + k] = 1.0;
    return j;
  }

  Mat mass_matrix(const LinkFrames& f) const {
    const int n = n_dof();
    Mat M = Mat::Zero(n, n);
    auto add_body = [&](int link, double m, double I, const Vec2& c) {
      const Mat J = point_jacobian(f, link, c);
      const Vec j = angular_jacobian(link);
      M.noalias() += m * J.transpose() * J;
      M.noalias() += I * j * j.transpose();
    };
    add_body(-1, robot_.base.mass, robot_.base.inertia, base_com(f));
    for (std::size_t i = 0; i < robot_.links.size(); ++i)
      add_body(static_cast<int>(i), robot_.links[i].mass, robot_.links[i].inertia, link_com(f, static_cast<int>(i)));
    for (int i = 0; i < robot_.n_joints(); ++i) M(3 + i, 3 + i) += robot_.joints[static_cast<std::size_t>(i)].armature;
    return M;
  }

  // Point accelerations at zero generalized acceleration are a_o - w^2 r for
  // each body, accumulated down the chain.
  Vec bias_forces(const LinkFrames& f, const SimState& s) const {
    const auto n = robot_.links.size();
    std::vector<double> w(n);
    std::vector<Vec2> a_origin(n);
    const Vec2 g(0.0, -config_.gravity);
    Vec h = Vec::Zero(n_dof());
    const double wb = config_.fixed_base ? 0.0 : s.pitch_rate;
    auto body_acc = [&](int link, const Vec2& p) -> Vec2 {
      if (link < 0) return -wb * wb * (p - f.base_origin);
      const auto i = static_cast<std::size_t>(link);
      return a_origin[i] - w[i] * w[i] * (p - f.origin[i]);
    };
    for (std::size_t i = 0; i < n; ++i) {
      const int parent = robot_.links[i].parent;
      a_origin[i] = body_acc(parent, f.origin[i]);
      w[i] = (parent < 0 ? wb : w[static_cast<std::size_t>(parent)]) + s.qdot[static_cast<Eigen::Index>(i)];
    }
    const Vec2 cb = base_com(f);
    h += robot_.base.mass * point_jacobian(f, -1, cb).transpose() * (body_acc(-1, cb) - g);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 c = link_com(f, static_cast<int>(i));
      h += robot_.links[i].mass * point_jacobian(f, static_cast<int>(i), c).transpose() * (body_acc(static_cast<int>(i), c) - g);
    }
    return h;
  }

  std::pair<Vec2, double> momentum(const LinkFrames& f, const Vec& v) const {
    const Vec2 c = com_position(f);
    Vec2 p = Vec2::Zero();
    double l = 0.0;
    auto add = [&](int link, double m, double I, const Vec2& pc) {
      const Vec2 vc = point_jacobian(f, link, pc) * v;
      p += m * vc;
      l += m * cross2(pc - c, vc) + I * angular_jacobian(link).dot(v);
    };
    add(-1, robot_.base.mass, robot_.base.inertia, base_com(f));
    for (std::size_t i = 0; i < robot_.links.size(); ++i)
      add(static_cast<int>(i), robot_.links[i].mass, robot_.links[i].inertia, link_com(f, static_cast<int>(i)));
    return {p, l};
  }

  // Shift the base twist so that total momentum matches the target. A base
  // rotation rate change dw changes L_com by I_com dw; a uniform velocity
  // change leaves L_com alone.
  void project_momentum(SimState& s, const Vec2& p_target, double l_target) const {
    const auto f = link_frames(robot_, s.base_pos, s.pitch, s.q);
    const auto [p, l] = momentum(f, s.gen_vel());
    const Vec2 c = com_position(f);
    double i_com = robot_.base.inertia + robot_.base.mass * (base_com(f) - c).squaredNorm();
    for (std::size_t i = 0; i < robot_.links.size(); ++i)
      i_com += robot_.links[i].inertia + robot_.links[i].mass * (link_com(f, static_cast<int>(i)) - c).squaredNorm();
    const double dw = (l_target - l) / i_com;
    const double mt = robot_.total_mass();
    const Vec2 dv = (p_target - p - mt * dw * perp(c - f.base_origin)) / mt;
    s.pitch_rate += dw;
    s.base_vel += dv;
  }

  // Penalty contact at configuration f with velocities from s. Anchor updates
  // are written into `out`.
  std::vector<ContactForce> compute_contacts(const LinkFrames& f, const SimState& s, SimState& out) const {
    std::vector<ContactForce> forces;
    out.anchor_x.resize(contact_points_.size(), 0.0);
    out.anchored.resize(contact_points_.size(), false);
    if (!config_.contact_enabled) return forces;
    const auto& g = config_.ground;
    const Vec v = s.gen_vel();
    for (std::size_t c = 0; c < contact_points_.size(); ++c) {
      const auto& cp = contact_points_[c];
      const Vec2 p = point_world(f, cp.link, cp.local);
      if (p.y() >= 0.0) {
        out.anchored[c] = false;
        continue;
      }
      const Vec2 vp = point_jacobian(f, cp.link, p) * v;
      const double depth = -p.y();
      const double fn = std::max(0.0, g.stiffness * depth - g.damping * vp.y());
      if (!out.anchored[c]) {
        out.anchored[c] = true;
        out.anchor_x[c] = p.x();
      }
      double ft = -g.tangential_stiffness * (p.x() - out.anchor_x[c]) - g.tangential_damping * vp.x();
      const double cap = g.friction * fn;
      if (std::abs(ft) > cap) {
        ft = std::copysign(cap, ft);
        out.anchor_x[c] = p.x() + ft / g.tangential_stiffness;
      }
      forces.push_back({cp.link, p, Vec2(ft, fn), depth});
    }
    return forces;
  }

  RobotModel robot_;
  SimConfig config_;
  Vec torque_limit_;
  std::vector<std::vector<int>> chain_;  // link and its ancestors
  std::vector<ContactPoint> contact_points_;
  std::vector<int> feet_;
};

}  // namespace pmp
