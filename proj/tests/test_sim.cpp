#include "pmp/sim.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pmp;

namespace {

// One rigid link hanging from a pinned base.
RobotModel pendulum_model(double length, double mass, double inertia, double com_offset) {
  RobotModel r;
  r.name = "pendulum";
  r.base = BaseSpec{1.0, 0.1, 1.0, {0.0, 0.0}};
  r.links.push_back({"rod", -1, {0.0, 0.0}, length, mass, inertia, com_offset, {}});
  r.joints.push_back({"pivot", 0, -kPi, kPi, 0.0, 100.0, false, 0.0});
  r.n_lower = 1;
  r.n_upper = 0;
  r.validate();
  return r;
}

SimState random_state(const PlanarSim& sim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto s = sim.initial_state();
  s.base_pos += Vec2(0.1 * u(rng), 0.3 + 0.1 * u(rng));
  s.pitch = 0.3 * u(rng);
  s.base_vel = {u(rng), u(rng)};
  s.pitch_rate = u(rng);
  for (int i = 0; i < s.q.size(); ++i) {
    s.q[i] += 0.4 * u(rng);
    s.qdot[i] = 2.0 * u(rng);
  }
  return s;
}

SimState with_gen(const SimState& base, const Vec& pos, const Vec& vel) {
  SimState s = base;
  s.base_pos = {pos[0], pos[1]};
  s.pitch = pos[2];
  s.q = pos.tail(pos.size() - 3);
  s.set_gen_vel(vel);
  return s;
}

double potential_only(const PlanarSim& sim, const SimState& s) { return sim.potential_energy(s); }

}  // namespace

TEST(PdTorque, HandCases) {
  const Vec one = Vec::Ones(1);
  EXPECT_EQ(pd_torque(Vec::Constant(1, 0.3), Vec::Constant(1, 0.3), Vec::Zero(1), one * 10, one, one * 100)[0], 0.0);
  EXPECT_DOUBLE_EQ(pd_torque(Vec::Constant(1, 0.5), Vec::Zero(1), one, one * 10, one, one * 100)[0], 4.0);
  EXPECT_EQ(pd_torque(Vec::Constant(1, 1e6), Vec::Zero(1), Vec::Zero(1), one * 10, one, one * 7)[0], 7.0);
  EXPECT_EQ(pd_torque(Vec::Constant(1, -1e6), Vec::Zero(1), Vec::Zero(1), one * 10, one, one * 7)[0], -7.0);
  EXPECT_THROW(pd_torque(Vec::Zero(2), Vec::Zero(1), Vec::Zero(1), one, one, one), ShapeError);
}

TEST(ProjectedGravity, Cases) {
  EXPECT_EQ(projected_gravity(0.0), Vec2(0.0, -1.0));
  EXPECT_NEAR((projected_gravity(kPi / 2) - Vec2(-1.0, 0.0)).norm(), 0.0, 1e-15);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(projected_gravity(u(rng)).norm(), 1.0, 1e-15);
}

TEST(ForwardKinematics, ZeroAnglesAreChainSums) {
  const auto r = default_robot();
  const auto kp = forward_kinematics(r, {0.0, 0.0}, 0.0, Vec::Zero(r.n_joints()));
  ASSERT_EQ(kp.size(), 6u);
  // elbow = shoulder attach + upper arm; wrist adds the forearm
  EXPECT_NEAR((kp[0] - Vec2(0.0, 0.38 - 0.24)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((kp[1] - Vec2(0.0, 0.38 - 0.48)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((kp[4] - Vec2(0.0, -0.05 - 0.32 - 0.32 - 0.06)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, ShoulderQuarterTurn) {
  const auto r = default_robot();
  Vec q = Vec::Zero(r.n_joints());
  q[6] = kPi / 2;
  const auto kp = forward_kinematics(r, {0.0, 0.0}, 0.0, q);
  EXPECT_NEAR((kp[0] - Vec2(0.24, 0.38)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((kp[1] - Vec2(0.48, 0.38)).norm(), 0.0, 1e-12);
  // wrist travels a quarter arc of radius 0.48 about the shoulder
  const auto k0 = forward_kinematics(r, {0.0, 0.0}, 0.0, Vec::Zero(r.n_joints()));
  EXPECT_NEAR((k0[1] - Vec2(0.0, 0.38)).norm(), 0.48, 1e-12);
  EXPECT_NEAR((kp[1] - Vec2(0.0, 0.38)).norm(), 0.48, 1e-12);
}

TEST(ForwardKinematics, RigidUnderBasePose) {
  const auto r = default_robot();
  const Vec q = r.default_q();
  const auto a = forward_kinematics(r, {0.0, 0.0}, 0.0, q);
  const auto b = forward_kinematics(r, {1.3, -0.4}, 0.7, q);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR((a[i] - a[j]).norm(), (b[i] - b[j]).norm(), 1e-12);
}

TEST(ApplyPush, SetsOnlyVx) {
  PlanarSim sim(default_robot(), SimConfig{});
  auto s = sim.initial_state();
  s.base_vel = {0.2, 0.1};
  const auto p = apply_push(s, 0.5);
  EXPECT_EQ(p.base_vel.x(), 0.5);
  EXPECT_EQ(p.base_vel.y(), 0.1);
  EXPECT_EQ(p.base_pos, s.base_pos);
  EXPECT_EQ(p.q, s.q);
  const auto same = apply_push(s, 0.2);
  EXPECT_EQ(same.base_vel, s.base_vel);
}

TEST(Dynamics, MassMatrixSymmetricPositiveDefinite) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto s = random_state(sim, 2);
  const Mat M = sim.mass_matrix(s);
  EXPECT_NEAR((M - M.transpose()).norm(), 0.0, 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat> es(M);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_NEAR(M(0, 0), default_robot().total_mass(), 1e-12);
}

// Lagrangian oracle: h = Mdot qd - dT/dq + dV/dq, all by central differences.
TEST(Dynamics, BiasMatchesLagrangian) {
  PlanarSim sim(default_robot(), SimConfig{});
  for (std::uint64_t seed = 3; seed < 8; ++seed) {
    const auto s = random_state(sim, seed);
    const Vec q = s.gen_pos(), v = s.gen_vel();
    const int n = static_cast<int>(q.size());
    const double eps = 1e-6;
    const Mat Mdot = (sim.mass_matrix(with_gen(s, q + eps * v, v)) - sim.mass_matrix(with_gen(s, q - eps * v, v))) / (2 * eps);
    Vec oracle = Mdot * v;
    for (int i = 0; i < n; ++i) {
      Vec dq = Vec::Zero(n);
      dq[i] = eps;
      const auto sp = with_gen(s, q + dq, v), sm = with_gen(s, q - dq, v);
      oracle[i] -= (sim.kinetic_energy(sp) - sim.kinetic_energy(sm)) / (2 * eps);
      oracle[i] += (potential_only(sim, sp) - potential_only(sim, sm)) / (2 * eps);
    }
    const Vec h = sim.bias_forces(s);
    EXPECT_LT((h - oracle).norm() / oracle.norm(), 1e-7) << "seed " << seed;
  }
}

TEST(Dynamics, FreeBodyKeepsVelocity) {
  SimConfig cfg;
  cfg.gravity = 0.0;
  cfg.contact_enabled = false;
  cfg.gains.kp = Vec::Zero(10);
  cfg.gains.kd = Vec::Zero(10);
  PlanarSim sim(default_robot(), cfg);
  auto s = sim.initial_state();
  s.base_vel = {0.7, -0.3};
  for (int k = 0; k < 400; ++k) s = sim.step(s, Vec::Zero(6), Vec::Zero(4));
  EXPECT_NEAR((s.base_vel - Vec2(0.7, -0.3)).norm(), 0.0, 1e-12);
  EXPECT_NEAR(s.pitch_rate, 0.0, 1e-12);
}

TEST(Dynamics, FreeFlightMomentumConserved) {
  SimConfig cfg;
  cfg.contact_enabled = false;
  PlanarSim sim(default_robot(), cfg);
  auto s = random_state(sim, 9);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  const double mt = sim.robot().total_mass();
  double worst_px = 0.0, worst_l = 0.0, worst_pz = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto [p0, l0] = sim.momentum(s);
    Vec tau(6);
    for (int i = 0; i < 6; ++i) tau[i] = u(rng);
    Vec up(4);
    for (int i = 0; i < 4; ++i) up[i] = 0.05 * u(rng);
    s = sim.step(s, tau, up);
    const auto [p1, l1] = sim.momentum(s);
    worst_px = std::max(worst_px, std::abs(p1.x() - p0.x()));
    worst_pz = std::max(worst_pz, std::abs(p1.y() - p0.y() + mt * cfg.gravity * cfg.dt_physics));
    worst_l = std::max(worst_l, std::abs(l1 - l0));
  }
  EXPECT_LT(worst_px, 1e-9);
  EXPECT_LT(worst_pz, 1e-9);
  EXPECT_LT(worst_l, 1e-9);
}

TEST(Dynamics, PendulumPeriod) {
  const double m = 1.5, d = 0.4, I = 0.02;
  SimConfig cfg;
  cfg.fixed_base = true;
  cfg.contact_enabled = false;
  cfg.gains.kp = Vec::Zero(1);
  cfg.gains.kd = Vec::Zero(1);
  PlanarSim sim(pendulum_model(0.8, m, I, d), cfg);
  auto s = sim.initial_state(Vec::Constant(1, 0.05));
  const double expected = 2 * kPi * std::sqrt((I + m * d * d) / (m * cfg.gravity * d));
  std::vector<double> crossings;
  double prev = s.q[0];
  while (crossings.size() < 5) {
    const double t0 = s.time;
    s = sim.step(s, Vec::Zero(1), Vec::Zero(0));
    if (prev > 0.0 && s.q[0] <= 0.0) crossings.push_back(t0 + cfg.dt_physics * prev / (prev - s.q[0]));
    prev = s.q[0];
    ASSERT_LT(s.time, 100.0);
  }
  const double period = (crossings.back() - crossings.front()) / (crossings.size() - 1);
  EXPECT_LT(std::abs(period - expected) / expected, 0.01) << period << " vs " << expected;
}

TEST(Dynamics, RestPenetrationMatchesSpringBalance) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  auto s = sim.initial_state();
  s.base_pos.y() += 0.02;
  for (int k = 0; k < 5 * 50; ++k) s = sim.control_step(s, r.default_lower(), r.default_upper());
  double depth = 0.0;
  for (const auto& c : sim.contact_forces(s)) depth = std::max(depth, c.penetration);
  const double bound = 1.5 * r.total_mass() * sim.config().gravity / sim.config().ground.stiffness;
  EXPECT_GT(depth, 0.0);
  EXPECT_LE(depth, bound);
  EXPECT_LT(s.base_vel.norm(), 2e-2);
}

// Fixed-target PD behaves as a damped spring, so the passive energy includes
// its potential.
TEST(Dynamics, PassiveEnergyDecays) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  const Vec kp = sim.config().gains.kp;
  const Vec q0 = r.default_q();
  auto energy = [&](const SimState& s) {
    const Vec e = s.q - q0;
    return sim.energy(s) + 0.5 * e.dot(kp.cwiseProduct(e));
  };
  auto s = sim.initial_state();
  s.base_pos.y() += 0.05;
  const int window = 400;
  std::vector<double> e{energy(s)};
  for (int k = 1; k <= 10 * 200; ++k) {
    s = sim.step(s, sim.lower_pd(s, r.default_lower()), r.default_upper());
    e.push_back(energy(s));
  }
  for (std::size_t k = window; k < e.size(); k += window)
    EXPECT_LE(e[k], e[k - window] + 1e-6 * window) << "window ending at step " << k;
}

TEST(Dynamics, ContactIsOneSided) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  auto s = sim.initial_state();
  s.base_pos.y() += 0.3;
  EXPECT_TRUE(sim.contact_forces(s).empty());
  for (int k = 0; k < 2 * 200; ++k) {
    s = sim.step(s, sim.lower_pd(s, r.default_lower()), r.default_upper());
    for (const auto& c : sim.contact_forces(s)) {
      EXPECT_GE(c.force.y(), 0.0);
      EXPECT_GT(c.penetration, 0.0);
      EXPECT_LE(std::abs(c.force.x()), sim.config().ground.friction * c.force.y() + 1e-12);
    }
  }
}

TEST(Dynamics, ControlStepIsDecimatedSteps) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  const auto s0 = sim.initial_state();
  Vec lower = r.default_lower();
  lower[0] += 0.2;
  const auto a = sim.control_step(s0, lower, r.default_upper());
  auto b = s0;
  for (int k = 0; k < 4; ++k) b = sim.step(b, sim.lower_pd(b, lower), r.default_upper());
  EXPECT_EQ(a.gen_pos(), b.gen_pos());
  EXPECT_EQ(a.gen_vel(), b.gen_vel());
  EXPECT_DOUBLE_EQ(a.time, 4 * sim.config().dt_physics);
}

TEST(Dynamics, Deterministic) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  auto run = [&] {
    auto s = sim.initial_state();
    for (int k = 0; k < 200; ++k) {
      Vec lower = r.default_lower();
      lower[1] += 0.3 * std::sin(0.1 * k);
      s = sim.control_step(s, lower, r.default_upper());
    }
    return s;
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.gen_pos(), b.gen_pos());
  EXPECT_EQ(a.gen_vel(), b.gen_vel());
  EXPECT_EQ(a.anchor_x, b.anchor_x);
}

TEST(Dynamics, NonFiniteStateRaisesDivergence) {
  PlanarSim sim(default_robot(), SimConfig{});
  auto s = sim.initial_state();
  s.qdot[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sim.step(s, Vec::Zero(6), Vec::Zero(4)), DivergenceError);
  EXPECT_THROW(sim.step(sim.initial_state(), Vec::Zero(5), Vec::Zero(4)), ShapeError);
}

TEST(Dynamics, DefaultPoseHoldsStanding) {
  PlanarSim sim(default_robot(), SimConfig{});
  const auto& r = sim.robot();
  auto s = sim.initial_state();
  double min_h = s.base_pos.y(), max_pitch = 0.0;
  for (int k = 0; k < 20 * 50; ++k) {
    s = sim.control_step(s, r.default_lower(), r.default_upper());
    min_h = std::min(min_h, s.base_pos.y());
    max_pitch = std::max(max_pitch, std::abs(s.pitch));
  }
  EXPECT_GT(min_h, 0.6);
  EXPECT_LT(max_pitch, 0.3);
  EXPECT_TRUE(s.foot_contact[0] && s.foot_contact[1]);
}
