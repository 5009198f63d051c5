#pragma once

#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmoe/algos/ppo.hpp"
#include "pmoe/core/error.hpp"
#include "pmoe/diff/checkpoint.hpp"
#include "pmoe/harness/metric_log.hpp"
#include "pmoe/harness/metrics.hpp"
#include "pmoe/harness/run_config.hpp"
#include "pmoe/harness/runner.hpp"
#include "pmoe/harness/svg.hpp"

namespace pmoe {

struct CliOverrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> algo;
  std::optional<std::size_t> k;
  std::optional<double> alpha;
  std::optional<std::string> mode;
  std::optional<std::string> router;
  std::optional<double> obs_noise;
  bool fixed_layout = false;
  std::optional<std::size_t> steps;
  std::optional<std::string> env;
};

inline void add_run_options(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config, "key = value run configuration file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--algo", o.algo, "pmoe-sac | pmoe-ppo | sac | gating-sac | gumbel-sac | reinforce-sac");
  cmd->add_option("--k", o.k, "number of primitives");
  cmd->add_option("--alpha", o.alpha, "entropy temperature");
  cmd->add_option("--mode", o.mode, "primitive update: bpa | bpm");
  cmd->add_option("--router", o.router, "freq | gumbel | reinforce | gating");
  cmd->add_option("--obs-noise", o.obs_noise, "observation noise sigma for the final evaluation");
  cmd->add_flag("--fixed-layout", o.fixed_layout, "freeze target and obstacle placement");
  cmd->add_option("--steps", o.steps, "total environment steps");
  cmd->add_option("--env", o.env, "target-reaching | bandit");
}

inline RunConfig resolve_run_config(const CliOverrides& o) {
  RunConfig c;
  if (!o.config.empty()) {
    c = RunConfig::load(o.config);
  } else if (o.algo) {
    c.trainer = TrainerConfig::defaults(parse_algorithm(*o.algo));
  }
  if (o.algo) c.trainer.algorithm = parse_algorithm(*o.algo);
  if (o.router) {
    const RouterKind r = parse_router(*o.router);
    if (is_ppo(c.trainer.algorithm)) {
      if (r != RouterKind::freq) throw UsageError("pmoe-ppo supports only --router freq");
    } else if (c.trainer.algorithm == Algorithm::sac) {
      if (r != RouterKind::freq) throw UsageError("--router applies to mixture algorithms, not 'sac'");
    } else {
      c.trainer.algorithm = sac_variant(r);
    }
  }
  if (c.trainer.algorithm == Algorithm::sac && !o.k) c.trainer.k = 1;
  if (o.seed) c.trainer.seed = *o.seed;
  if (o.k) c.trainer.k = *o.k;
  if (o.alpha) c.trainer.alpha = *o.alpha;
  if (o.mode) c.trainer.mode = parse_primitive_mode(*o.mode);
  if (o.steps) c.trainer.total_steps = *o.steps;
  if (o.env) c.env = *o.env;
  if (o.fixed_layout) c.fixed_layout = true;
  if (o.obs_noise) c.noise_sigmas = {*o.obs_noise};
  if (o.out) c.out_dir = *o.out;
  c.validate();
  return c;
}

inline void print_evaluations(std::ostream& out, const std::vector<NoiseEvaluation>& evals) {
  for (const NoiseEvaluation& e : evals) {
    out << "obs_noise=" << e.sigma << " return=" << e.result.mean_return << " +- " << e.result.std_return
        << " success=" << e.result.success_rate << '\n';
  }
}

inline RunConfig config_for_checkpoint(const std::string& checkpoint, const CliOverrides& o) {
  CliOverrides local = o;
  if (local.config.empty()) {
    const auto sibling = std::filesystem::path(checkpoint).parent_path() / "config.cfg";
    if (std::filesystem::exists(sibling)) local.config = sibling.string();
  }
  return resolve_run_config(local);
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Probabilistic mixture-of-experts RL benchmark"};
  app.require_subcommand(1);

  CliOverrides train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "run one seeded trainer");
  add_run_options(train_cmd, train_opts);

  CliOverrides sweep_opts;
  std::size_t seeds = 5, workers = 1;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run consecutive seeds, one output directory each");
  add_run_options(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--workers", workers, "concurrent trainers")->check(CLI::PositiveNumber);

  CliOverrides eval_opts;
  std::string eval_checkpoint;
  std::optional<std::size_t> eval_episodes;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint under observation noise");
  add_run_options(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint_<step>.bin")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");

  std::vector<std::string> plot_logs;
  std::string plot_out = ".";
  std::size_t plot_window = 10;
  CLI::App* plot_cmd = app.add_subcommand("plot", "render metric logs to curves.svg and report AUC vs the first log");
  plot_cmd->add_option("logs", plot_logs, "metrics.jsonl files")->required();
  plot_cmd->add_option("--out", plot_out, "output directory");
  plot_cmd->add_option("--window", plot_window, "moving-average window")->check(CLI::PositiveNumber);

  CliOverrides export_opts;
  std::string export_checkpoint;
  std::optional<std::size_t> export_episodes;
  CLI::App* export_cmd = app.add_subcommand("export-actions", "dump per-primitive actions and routing traces");
  add_run_options(export_cmd, export_opts);
  export_cmd->add_option("--checkpoint", export_checkpoint, "checkpoint_<step>.bin")->required();
  export_cmd->add_option("--episodes", export_episodes, "episodes to roll out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) {
      const RunConfig c = resolve_run_config(train_opts);
      const RunOutputs r = run_training(c, c.out_dir);
      out << "wrote " << c.out_dir << " (" << r.train.records.size() << " records, " << r.train.updates << " updates)\n";
      print_evaluations(out, r.evaluations);
    } else if (*sweep_cmd) {
      const RunConfig base = resolve_run_config(sweep_opts);
      std::atomic<std::size_t> next{0};
      std::mutex io;
      std::vector<std::string> failures;
      auto worker = [&] {
        for (std::size_t i = next++; i < seeds; i = next++) {
          RunConfig c = base;
          c.trainer.seed = base.trainer.seed + i;
          const std::string dir = (std::filesystem::path(base.out_dir) / ("seed_" + std::to_string(c.trainer.seed))).string();
          try {
            run_training(c, dir);
            std::lock_guard lock(io);
            out << "wrote " << dir << '\n';
          } catch (const std::exception& e) {
            std::lock_guard lock(io);
            failures.push_back(dir + ": " + e.what());
          }
        }
      };
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < std::min(workers, seeds); ++w) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
      for (const std::string& f : failures) err << "error: " << f << '\n';
      if (!failures.empty()) return 3;
    } else if (*eval_cmd) {
      const RunConfig c = config_for_checkpoint(eval_checkpoint, eval_opts);
      const std::unique_ptr<Agent> agent = load_agent(Checkpoint::load(eval_checkpoint));
      const std::unique_ptr<Env> env = make_env(c);
      const auto evals = evaluate_noise_levels(*agent, *env, c, eval_episodes.value_or(c.final_eval_episodes));
      print_evaluations(out, evals);
      if (eval_opts.out) {
        std::filesystem::create_directories(*eval_opts.out);
        std::ofstream f(std::filesystem::path(*eval_opts.out) / "eval.json", std::ios::trunc);
        f << to_json(evals).dump(2) << '\n';
      }
    } else if (*plot_cmd) {
      std::vector<NamedCurve> curves;
      for (const std::string& path : plot_logs) {
        const std::filesystem::path p(path);
        const std::string label = p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string();
        curves.push_back({label, eval_curve(read_metric_log(path))});
      }
      std::filesystem::create_directories(plot_out);
      const std::string svg = (std::filesystem::path(plot_out) / "curves.svg").string();
      write_curves_svg(curves, svg, plot_window);
      for (const NamedCurve& c : curves) out << c.label << " auc=" << auc(c.curve, curves.front().curve) << "%\n";
      out << "wrote " << svg << '\n';
    } else if (*export_cmd) {
      const RunConfig c = config_for_checkpoint(export_checkpoint, export_opts);
      const std::unique_ptr<Agent> agent = load_agent(Checkpoint::load(export_checkpoint));
      const std::unique_ptr<Env> env = make_env(c);
      const std::string dir = export_opts.out ? *export_opts.out : std::filesystem::path(export_checkpoint).parent_path().string();
      std::filesystem::create_directories(dir.empty() ? "." : dir);
      const std::filesystem::path base(dir.empty() ? "." : dir);
      const ActionDump dump = collect_action_dump(*agent, *env, export_episodes.value_or(c.export_episodes),
                                                  final_eval_seed(c), c.trainer.episode_length);
      write_action_dump(dump, (base / "actions_dump.csv").string());
      write_routing_trace(routing_probability_trace(*agent, *env, final_eval_seed(c), 0, c.trainer.episode_length),
                          (base / "routing_trace.csv").string());
      const auto sep = primitive_separation(dump);
      out << "states=" << dump.rows.size() << " separation=" << (sep ? format_double(*sep) : "null") << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pmoe
