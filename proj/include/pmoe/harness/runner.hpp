#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmoe/algos/evaluate.hpp"
#include "pmoe/algos/ppo.hpp"
#include "pmoe/algos/sac.hpp"
#include "pmoe/harness/metric_log.hpp"
#include "pmoe/harness/metrics.hpp"
#include "pmoe/harness/run_config.hpp"
#include "pmoe/harness/svg.hpp"

namespace pmoe {

struct NoiseEvaluation {
  double sigma = 0.0;
  EvalResult result;
};

struct RunOutputs {
  TrainResult train;
  std::vector<NoiseEvaluation> evaluations;
  std::string checkpoint_path;
};

inline std::uint64_t final_eval_seed(const RunConfig& c) { return mix_seed(c.trainer.seed, 99); }

inline std::vector<NoiseEvaluation> evaluate_noise_levels(const Agent& agent, const Env& env, const RunConfig& c,
                                                          std::size_t episodes) {
  std::vector<NoiseEvaluation> out;
  for (double sigma : c.noise_sigmas) {
    out.push_back({sigma, evaluate(agent, env, episodes, sigma, final_eval_seed(c), c.trainer.episode_length)});
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<NoiseEvaluation>& evals) {
  nlohmann::json arr = nlohmann::json::array();
  for (const NoiseEvaluation& e : evals) {
    arr.push_back({{"obs_noise", e.sigma},
                   {"mean_return", e.result.mean_return},
                   {"std_return", e.result.std_return},
                   {"success_rate", e.result.success_rate},
                   {"episodes", e.result.returns.size()},
                   {"mean_weights", e.result.mean_weights},
                   {"routing_entropy", e.result.routing_entropy}});
  }
  return arr;
}

inline std::string checkpoint_file(const std::filesystem::path& dir, std::size_t step) {
  return (dir / ("checkpoint_" + std::to_string(step) + ".bin")).string();
}

// One seeded training run with all of its on-disk artefacts in `dir`.
inline RunOutputs run_training(const RunConfig& config, const std::string& dir) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path out(dir);
  fs::create_directories(out);
  config.save((out / "config.cfg").string());

  std::unique_ptr<Env> env = make_env(config);
  MetricLog log((out / "metrics.jsonl").string());
  std::optional<TrajectoryWriter> trajectories;
  if (config.export_trajectories) trajectories.emplace((out / "trajectories.csv").string());

  TrainerCallbacks callbacks;
  callbacks.on_record = [&](const MetricRecord& r) { log.append(r); };
  if (trajectories) callbacks.on_env_step = [&](const EnvStepEvent& e) { trajectories->write(e); };
  callbacks.on_checkpoint = [&](std::size_t step, const Agent& agent) { agent.checkpoint().save(checkpoint_file(out, step)); };

  RunOutputs result;
  result.train = train(config.trainer, *env, callbacks);
  const Agent& agent = *result.train.agent;
  result.checkpoint_path = checkpoint_file(out, config.trainer.total_steps);
  agent.checkpoint().save(result.checkpoint_path);

  if (config.final_eval_episodes > 0) {
    result.evaluations = evaluate_noise_levels(agent, *env, config, config.final_eval_episodes);
    std::ofstream eval_out(out / "eval.json", std::ios::trunc);
    eval_out << to_json(result.evaluations).dump(2) << '\n';
  }
  if (config.export_actions) {
    const ActionDump dump = collect_action_dump(agent, *env, config.export_episodes, final_eval_seed(config),
                                                config.trainer.episode_length);
    write_action_dump(dump, (out / "actions_dump.csv").string());
  }
  write_curves_svg({{to_string(config.trainer.algorithm), eval_curve(result.train.records)}},
                   (out / "curves.svg").string());
  return result;
}

}  // namespace pmoe
