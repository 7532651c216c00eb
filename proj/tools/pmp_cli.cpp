#include "pmp/config.hpp"
#include "pmp/log.hpp"
#include "pmp/teleop.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

using namespace pmp;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override a config value, e.g. --set ppo.seed=3")->take_all();
  app->add_option("--seed", c.seed, "seed for this stage");
}

// Usage-level problems: bad config keys or values.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Config make_config(const Common& c, const char* seed_key) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) sets.push_back(std::string(seed_key) + "=" + std::to_string(*c.seed));
  try {
    return load_config(c.config, sets);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
}

MotionDataset dataset_for(const Config& cfg, const RobotModel& robot, const std::string& path) {
  if (path.empty()) return generate_synthetic_dataset(cfg.data.spec(), cfg.data.seed, robot);
  const auto load = load_dataset(path, robot);
  if (load.clamped_values) spdlog::warn("{}: {} values clamped to joint limits", path, load.clamped_values);
  return load.dataset;
}

std::optional<CVAEModel> prior_for(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_cvae(path);
}

void write_lines(const std::string& path, const std::string& header, const std::vector<std::string>& lines) {
  std::string text = header + "\n";
  for (const auto& l : lines) text += l + "\n";
  json_util::write_file(path, text);
}

std::atomic<bool> g_stop{false};

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Planar motion-prior locomotion pipeline"};
  app.require_subcommand(1);

  Common gd_c, tc_c, tp_c, ev_c, rb_c, ts_c;
  std::string gd_out = "data.json";
  auto* gd = app.add_subcommand("gen-data", "generate the synthetic motion dataset");
  add_common(gd, gd_c);
  gd->add_option("--out", gd_out, "dataset JSON path");

  std::string tc_data, tc_out = "cvae.ckpt", tc_log;
  auto* tc = app.add_subcommand("train-cvae", "train the motion prior");
  add_common(tc, tc_c);
  tc->add_option("--data", tc_data, "dataset JSON (default: generated from the config)");
  tc->add_option("--out", tc_out, "checkpoint path");
  tc->add_option("--log", tc_log, "per-epoch loss CSV");

  std::string tp_data, tp_cvae, tp_out = "policy.ckpt", tp_log;
  auto* tp = app.add_subcommand("train-policy", "train the lower-body policy with PPO");
  add_common(tp, tp_c);
  tp->add_option("--data", tp_data, "dataset JSON (default: generated from the config)");
  tp->add_option("--cvae", tp_cvae, "motion prior checkpoint; omit for the no-prior ablation");
  tp->add_option("--out", tp_out, "checkpoint path");
  tp->add_option("--log", tp_log, "per-iteration training log CSV");

  std::string ev_data, ev_cvae, ev_policy, ev_out = "eval.csv", ev_format = "csv", ev_method = "pmp";
  auto* ev = app.add_subcommand("eval", "evaluate a policy: n_traj episodes per clip");
  add_common(ev, ev_c);
  ev->add_option("--policy", ev_policy, "policy checkpoint")->required();
  ev->add_option("--cvae", ev_cvae, "motion prior checkpoint");
  ev->add_option("--data", ev_data, "dataset JSON (default: generated from the config)");
  ev->add_option("--out", ev_out, "report path");
  ev->add_option("--format", ev_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  ev->add_option("--method", ev_method, "label for the method column");

  std::string rb_data, rb_cvae, rb_policy, rb_out = "robustness.csv", rb_format = "csv", rb_method = "pmp";
  auto* rb = app.add_subcommand("robustness", "push and speed-factor sweeps");
  add_common(rb, rb_c);
  rb->add_option("--policy", rb_policy, "policy checkpoint")->required();
  rb->add_option("--cvae", rb_cvae, "motion prior checkpoint");
  rb->add_option("--data", rb_data, "dataset JSON (default: generated from the config)");
  rb->add_option("--out", rb_out, "report path");
  rb->add_option("--format", rb_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  rb->add_option("--method", rb_method, "label for the method column");

  std::string ts_data, ts_cvae, ts_policy;
  double ts_duration = 0.0;
  auto* ts = app.add_subcommand("teleop-serve", "serve the simulated robot over WebSocket");
  add_common(ts, ts_c);
  ts->add_option("--policy", ts_policy, "policy checkpoint")->required();
  ts->add_option("--cvae", ts_cvae, "motion prior checkpoint");
  ts->add_option("--data", ts_data, "dataset JSON (default: generated from the config)");
  ts->add_option("--duration", ts_duration, "stop after this many seconds (0 = until interrupted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gd->parsed()) {
      const auto cfg = make_config(gd_c, "data.seed");
      const auto robot = config_robot(cfg);
      save_dataset(generate_synthetic_dataset(cfg.data.spec(), cfg.data.seed, robot), gd_out);
      spdlog::info("wrote {} ({} clips)", gd_out, cfg.data.n_clips);
    } else if (tc->parsed()) {
      const auto cfg = make_config(tc_c, "cvae.seed");
      const auto robot = config_robot(cfg);
      const auto ds = dataset_for(cfg, robot, tc_data);
      std::vector<std::string> rows;
      const auto r = train_cvae(ds, cfg.cvae, [&](int epoch, const CVAEModel&, double loss) {
        spdlog::info("epoch {} loss {:.6g}", epoch, loss);
      });
      for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
        rows.push_back(std::to_string(i) + "," + format_number(r.loss_curve[i]) + "," + format_number(r.recon_curve[i]) + "," +
                       format_number(r.kl_curve[i]));
      save_cvae(r.model, tc_out);
      if (!tc_log.empty()) write_lines(tc_log, "epoch,loss,recon,kl", rows);
      spdlog::info("wrote {}", tc_out);
    } else if (tp->parsed()) {
      const auto cfg = make_config(tp_c, "ppo.seed");
      const auto robot = config_robot(cfg);
      const auto ds = dataset_for(cfg, robot, tp_data);
      const auto prior = prior_for(tp_cvae);
      const auto r = train_policy(robot, ds, prior ? &*prior : nullptr, cfg.train(), [](const TrainLogRow& row) {
        if (row.iter % 10 == 0)
          spdlog::info("iter {} reward {:.4f} survival {:.3f} alpha {:.3f}", row.iter, row.mean_reward, row.mean_survival,
                       row.mean_alpha);
      });
      save_policy(r.policy, r.meta, tp_out);
      if (!tp_log.empty()) {
        std::vector<std::string> rows;
        for (const auto& row : r.log) rows.push_back(format_log_row(row));
        write_lines(tp_log, kTrainLogHeader, rows);
      }
      spdlog::info("wrote {}", tp_out);
    } else if (ev->parsed() || rb->parsed()) {
      const bool sweep = rb->parsed();
      const auto cfg = make_config(sweep ? rb_c : ev_c, "eval.seed");
      const auto robot = config_robot(cfg);
      const auto ds = dataset_for(cfg, robot, sweep ? rb_data : ev_data);
      const auto prior = prior_for(sweep ? rb_cvae : ev_cvae);
      const auto [policy, meta] = load_policy(sweep ? rb_policy : ev_policy);
      const CVAEModel* pp = prior ? &*prior : nullptr;
      std::vector<EvalRow> rows;
      if (sweep) {
        rows = robustness_sweep(policy, meta, pp, ds, robot, cfg.sim, cfg.env, cfg.eval.robustness(), rb_method, cfg.eval.seed).rows();
      } else {
        rows = run_eval(policy, meta, pp, ds, robot, cfg.sim, cfg.env, {ev_method, cfg.eval.n_traj, 0.0, 1.0, cfg.eval.seed}).rows();
      }
      const auto& out = sweep ? rb_out : ev_out;
      emit_report(rows, out, parse_report_format(sweep ? rb_format : ev_format));
      spdlog::info("wrote {} ({} rows)", out, rows.size());
    } else if (ts->parsed()) {
      const auto cfg = make_config(ts_c, "eval.seed");
      const auto robot = config_robot(cfg);
      const auto ds = dataset_for(cfg, robot, ts_data);
      const auto prior = prior_for(ts_cvae);
      const auto [policy, meta] = load_policy(ts_policy);
      TeleopSession session(robot, cfg.sim, cfg.env, ds, policy, meta, prior ? &*prior : nullptr);
      TeleopServer server(session, cfg.teleop.host, static_cast<unsigned short>(cfg.teleop.port), cfg.teleop.state_hz,
                          teleop_model(robot, cfg.env.commands));
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      server.start();
      const auto t0 = std::chrono::steady_clock::now();
      while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (ts_duration > 0.0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= ts_duration) break;
      }
      server.stop();
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << std::flush;
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
