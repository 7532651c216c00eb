#include "pmp/eval.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pmp;

namespace {

Trajectory constant_trajectory(int T, const RobotModel& robot) {
  Trajectory tr;
  tr.dt_control = 0.02;
  tr.command = Command{0.5, 0.7, 0.0};
  tr.survival = 1.0;
  Vec q(robot.n_lower + robot.n_upper);
  q << robot.default_lower(), robot.default_upper();
  for (int t = 0; t < T; ++t) {
    tr.q.push_back(q);
    tr.qdot.push_back(Vec::Zero(q.size()));
    tr.pitch.push_back(0.0);
    tr.pitch_rate.push_back(0.0);
    tr.vx.push_back(0.5);
    tr.base_pos.push_back(Vec2(0.0, 0.7));
    tr.upper_target.push_back(robot.default_upper());
    tr.action.push_back(Vec::Zero(robot.n_lower));
    tr.contacts.push_back({true, true});
  }
  return tr;
}

Trajectory slice(const Trajectory& tr, int from, int to) {
  Trajectory s = tr;
  auto cut = [&](auto& v) { v = std::vector(v.begin() + from, v.begin() + to); };
  cut(s.q);
  cut(s.qdot);
  cut(s.pitch);
  cut(s.pitch_rate);
  cut(s.vx);
  cut(s.base_pos);
  cut(s.upper_target);
  cut(s.action);
  cut(s.contacts);
  return s;
}

MotionDataset small_dataset() {
  SyntheticSpec spec;
  spec.n_clips = 3;
  spec.frames_per_clip = 200;
  return generate_synthetic_dataset(spec, 0, default_robot());
}

EnvConfig short_episodes(double seconds) {
  EnvConfig ec;
  ec.max_episode_s = seconds;
  return ec;
}

const PolicyMeta kMeta{64, 6, 4, 0.5, 3.0, false};

}  // namespace

TEST(Metrics, PerfectConstantTrackingIsZero) {
  const auto robot = default_robot();
  const auto m = compute_metrics(constant_trajectory(10, robot), robot);
  for (std::size_t i = 0; i + 1 < 10; ++i) EXPECT_EQ(metric_values(m)[i], 0.0) << kMetricNames[i];
  EXPECT_EQ(m.survival, 1.0);
}

TEST(Metrics, ConstantUpperOffset) {
  const auto robot = default_robot();
  auto tr = constant_trajectory(10, robot);
  for (auto& q : tr.q) q.tail(4).array() += 0.1;
  const auto m = compute_metrics(tr, robot);
  EXPECT_NEAR(m.E_jpe_upper, 0.1, 1e-12);
  EXPECT_EQ(m.E_acc_upper, 0.0);
  EXPECT_EQ(m.E_action_upper, 0.0);
}

TEST(Metrics, ElbowOffsetMovesOnlyWrists) {
  const auto robot = default_robot();
  auto tr = constant_trajectory(5, robot);
  for (auto& q : tr.q) {
    q[7] += 0.1;
    q[9] += 0.1;
  }
  const auto m = compute_metrics(tr, robot);
  // elbows stay put; each wrist moves along a chord of the forearm circle
  const double forearm = robot.links[7].length;
  EXPECT_NEAR(m.E_kpe_upper, (2 * 0.0 + 2 * 2.0 * forearm * std::sin(0.05)) / 4.0, 1e-12);
  EXPECT_NEAR(m.E_jpe_upper, 0.05, 1e-12);
}

TEST(Metrics, BaseTermsClosedForm) {
  const auto robot = default_robot();
  auto tr = constant_trajectory(8, robot);
  for (auto& p : tr.pitch) p = 0.1;
  for (auto& w : tr.pitch_rate) w = -0.3;
  for (auto& v : tr.vx) v = 0.2;
  const auto m = compute_metrics(tr, robot);
  EXPECT_NEAR(m.E_g, std::sin(0.1), 1e-12);
  EXPECT_NEAR(m.E_ang, 0.3, 1e-12);
  EXPECT_NEAR(m.E_vel, 0.3, 1e-12);
}

TEST(Metrics, FiniteDifferenceTerms) {
  const auto robot = default_robot();
  auto tr = constant_trajectory(12, robot);
  const double dt = tr.dt_control;
  for (int t = 0; t < 12; ++t) {
    const double time = t * dt;
    tr.q[static_cast<std::size_t>(t)].head(6).array() += 0.5 * 2.0 * time * time;  // constant 2 rad/s^2
    tr.upper_target[static_cast<std::size_t>(t)].array() += 0.01 * t;
    tr.action[static_cast<std::size_t>(t)].setConstant(t % 2 ? 1.0 : -1.0);
  }
  const auto m = compute_metrics(tr, robot);
  EXPECT_NEAR(m.E_acc_lower, 2.0, 1e-9);
  EXPECT_EQ(m.E_acc_upper, 0.0);
  EXPECT_NEAR(m.E_action_upper, 0.01, 1e-12);
  EXPECT_EQ(m.E_action_lower, 2.0);
}

TEST(Metrics, TooShortThrows) {
  const auto robot = default_robot();
  EXPECT_THROW(compute_metrics(constant_trajectory(2, robot), robot), ArgumentError);
  EXPECT_NO_THROW(compute_metrics(constant_trajectory(3, robot), robot));
}

TEST(Metrics, SegmentationInvariance) {
  const auto robot = default_robot();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.2);
  for (int c = 0; c < 20; ++c) {
    auto tr = constant_trajectory(40, robot);
    for (std::size_t t = 0; t < 40; ++t) {
      for (Eigen::Index j = 0; j < tr.q[t].size(); ++j) tr.q[t][j] += n(rng);
      for (Eigen::Index j = 0; j < 4; ++j) tr.upper_target[t][j] += n(rng);
      tr.pitch[t] = n(rng);
      tr.pitch_rate[t] = n(rng);
      tr.vx[t] = n(rng);
    }
    const int cut = 5 + c;
    const auto whole = compute_metrics(tr, robot);
    const auto a = compute_metrics(slice(tr, 0, cut), robot), b = compute_metrics(slice(tr, cut, 40), robot);
    auto blend = [&](double x, double y) { return (cut * x + (40 - cut) * y) / 40.0; };
    EXPECT_NEAR(whole.E_jpe_upper, blend(a.E_jpe_upper, b.E_jpe_upper), 1e-10);
    EXPECT_NEAR(whole.E_kpe_upper, blend(a.E_kpe_upper, b.E_kpe_upper), 1e-10);
    EXPECT_NEAR(whole.E_vel, blend(a.E_vel, b.E_vel), 1e-10);
    EXPECT_NEAR(whole.E_ang, blend(a.E_ang, b.E_ang), 1e-10);
    EXPECT_NEAR(whole.E_g, blend(a.E_g, b.E_g), 1e-10);
  }
}

TEST(Metrics, NonNegativeOnRollouts) {
  const auto ds = small_dataset();
  LocoEnv env(default_robot(), SimConfig{}, short_episodes(2.0), ds, nullptr, 3);
  const auto p = make_policy(env.obs_dim(), 6, PolicyConfig{}, 3);
  const auto m = compute_metrics(run_episode(p, env, 1), env.robot());
  for (double v : metric_values(m)) EXPECT_GE(v, 0.0);
  EXPECT_LE(m.survival, 1.0);
}

TEST(RunEval, TableShapeAndDeterminism) {
  const auto ds = small_dataset();
  const auto p = make_policy(98, 6, PolicyConfig{}, 1);
  const auto a = run_eval(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, short_episodes(1.0), {"pmp", 2, 0.0, 1.0, 7});
  const auto b = run_eval(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, short_episodes(1.0), {"pmp", 2, 0.0, 1.0, 7});
  EXPECT_EQ(a.episodes.size(), 6u);
  EXPECT_EQ(a.clip_means.size(), 3u);
  EXPECT_EQ(a.overall.clip_id, "ALL");
  EXPECT_EQ(a.rows().size(), 10u);
  EXPECT_EQ(report_csv(a.rows()), report_csv(b.rows()));
  EXPECT_EQ(a.episodes[3].clip_id, ds.clips[1].id);
  EXPECT_EQ(a.episodes[3].trial, "1");
}

TEST(RunEval, TrialsUseDistinctCommands) {
  const auto ds = small_dataset();
  std::set<double> vx;
  for (std::size_t ci = 0; ci < 3; ++ci)
    for (int t = 0; t < 3; ++t) {
      LocoEnv env(default_robot(), SimConfig{}, EnvConfig{}, ds, nullptr, episode_seed(0, ci, t));
      env.reset(nullptr, ci);
      vx.insert(env.command().vx);
    }
  EXPECT_EQ(vx.size(), 9u);
}

TEST(RunEval, AblationHasSameSchema) {
  const auto ds = small_dataset();
  const auto prior = make_cvae(CVAEConfig{}, 4);
  const auto p = make_policy(98, 6, PolicyConfig{}, 1);
  PolicyMeta with = kMeta;
  with.uses_prior = true;
  const auto a = run_eval(p, with, &prior, ds, default_robot(), SimConfig{}, short_episodes(0.5), {"pmp", 1, 0.0, 1.0, 0});
  const auto b = run_eval(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, short_episodes(0.5), {"no_prior", 1, 0.0, 1.0, 0});
  EXPECT_EQ(a.rows().size(), b.rows().size());
  const auto ca = report_csv(a.rows()), cb = report_csv(b.rows());
  EXPECT_EQ(ca.substr(0, ca.find('\n')), cb.substr(0, cb.find('\n')));
}

TEST(RunEval, ObservationMismatchIsCompatibilityError) {
  const auto ds = small_dataset();
  const auto p = make_policy(97, 6, PolicyConfig{}, 1);
  EXPECT_THROW(run_eval(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, short_episodes(0.5), {}), CompatibilityError);
  const auto prior = make_cvae(CVAEConfig{.H = 16}, 4);
  const auto q = make_policy(98, 6, PolicyConfig{}, 1);
  PolicyMeta with = kMeta;
  with.uses_prior = true;
  EXPECT_THROW(run_eval(q, with, &prior, ds, default_robot(), SimConfig{}, short_episodes(0.5), {}), CompatibilityError);
  EXPECT_THROW(run_eval(q, with, nullptr, ds, default_robot(), SimConfig{}, short_episodes(0.5), {}), CompatibilityError);
}

TEST(Robustness, GridAndNullPerturbation) {
  const auto ds = small_dataset();
  const auto p = make_policy(98, 6, PolicyConfig{}, 2);
  RobustnessSpec rs;
  rs.trials = 1;
  const auto ec = short_episodes(1.0);
  const auto r = robustness_sweep(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, ec, rs);
  ASSERT_EQ(r.push.size(), 5u);
  ASSERT_EQ(r.speed.size(), 4u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r.push[i].overall.push_vel, rs.push_vels[i]);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.speed[i].overall.speed_factor, rs.speed_factors[i]);
  EXPECT_EQ(r.rows().size(), 9u * (3 + 3 + 1));
  const auto plain = run_eval(p, kMeta, nullptr, ds, default_robot(), SimConfig{}, ec, {"pmp", 1, 0.0, 1.0, 0});
  const auto strip = [](std::vector<EvalRow> rows) {
    for (auto& row : rows) row.speed_factor = row.push_vel = 0.0;
    return report_csv(rows);
  };
  EXPECT_EQ(strip(r.push[0].rows()), strip(plain.rows()));
  EXPECT_EQ(strip(r.speed[1].rows()), strip(plain.rows()));
}

TEST(Robustness, InvalidSpecThrows) {
  RobustnessSpec rs;
  rs.push_vels.clear();
  EXPECT_THROW(rs.validate(), ArgumentError);
  rs = RobustnessSpec{};
  rs.push_interval = 0.0;
  EXPECT_THROW(rs.validate(), ArgumentError);
}

TEST(Report, CsvHeaderAndEmpty) {
  const auto path = (std::filesystem::temp_directory_path() / "pmp_empty_report.csv").string();
  emit_report({}, path, ReportFormat::csv);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(),
            "method,clip_id,trial,push_vel,speed_factor,E_jpe_upper,E_kpe_upper,E_acc_upper,E_action_upper,E_vel,E_ang,"
            "E_acc_lower,E_action_lower,E_g,survival\n");
  std::filesystem::remove(path);
}

TEST(Report, JsonRoundTrip) {
  std::vector<EvalRow> rows;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 7; ++i) {
    std::array<double, 10> v{};
    for (auto& x : v) x = u(rng);
    rows.push_back({"pmp", "clip_" + std::to_string(i), i == 6 ? "mean" : std::to_string(i), u(rng), u(rng), metrics_from_values(v)});
  }
  const auto path = (std::filesystem::temp_directory_path() / "pmp_report.json").string();
  emit_report(rows, path, ReportFormat::json);
  const auto back = rows_from_json(json_util::parse_file(path));
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].clip_id, rows[i].clip_id);
    EXPECT_EQ(back[i].trial, rows[i].trial);
    EXPECT_EQ(back[i].push_vel, rows[i].push_vel);
    EXPECT_EQ(metric_values(back[i].metrics), metric_values(rows[i].metrics));
  }
  std::filesystem::remove(path);
}

TEST(Report, UnwritablePathNamesThePath) {
  try {
    emit_report({}, "/nonexistent_dir/r.csv", ReportFormat::csv);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent_dir/r.csv"), std::string::npos);
  }
}
