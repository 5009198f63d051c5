#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pmoe/algos/config.hpp"
#include "pmoe/core/error.hpp"
#include "pmoe/envs/bandit.hpp"
#include "pmoe/envs/env.hpp"
#include "pmoe/envs/target_reaching.hpp"

namespace pmoe {

struct RunConfig {
  TrainerConfig trainer;
  std::string env = "target-reaching";  // target-reaching | bandit
  std::string out_dir = "runs";
  std::vector<double> noise_sigmas{0.0, 0.05, 0.1};
  std::size_t obstacles = 3;
  bool fixed_layout = false;
  std::uint64_t layout_seed = 0;
  std::size_t final_eval_episodes = 100;
  bool export_trajectories = true;
  bool export_actions = false;
  std::size_t export_episodes = 10;

  KeyValues to_key_values() const {
    KeyValues kv;
    trainer.to_key_values(kv);
    kv["env"] = env;
    kv["out_dir"] = out_dir;
    kv["noise_sigmas"] = format_doubles(noise_sigmas);
    kv["obstacles"] = std::to_string(obstacles);
    kv["fixed_layout"] = fixed_layout ? "true" : "false";
    kv["layout_seed"] = std::to_string(layout_seed);
    kv["final_eval_episodes"] = std::to_string(final_eval_episodes);
    kv["export_trajectories"] = export_trajectories ? "true" : "false";
    kv["export_actions"] = export_actions ? "true" : "false";
    kv["export_episodes"] = std::to_string(export_episodes);
    return kv;
  }

  void apply(const std::string& key, const std::string& value) {
    if (trainer.apply(key, value)) return;
    if (key == "env") env = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "noise_sigmas") noise_sigmas = parse_doubles(key, value);
    else if (key == "obstacles") obstacles = parse_uint(key, value);
    else if (key == "fixed_layout") fixed_layout = parse_bool(key, value);
    else if (key == "layout_seed") layout_seed = parse_uint(key, value);
    else if (key == "final_eval_episodes") final_eval_episodes = parse_uint(key, value);
    else if (key == "export_trajectories") export_trajectories = parse_bool(key, value);
    else if (key == "export_actions") export_actions = parse_bool(key, value);
    else if (key == "export_episodes") export_episodes = parse_uint(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  void validate() const {
    trainer.validate();
    if (env != "target-reaching" && env != "bandit") throw ConfigError("unknown env '" + env + "'");
    for (double s : noise_sigmas) {
      if (s < 0.0) throw ConfigError("noise sigmas must be non-negative");
    }
  }

  std::string serialize() const { return format_key_values(to_key_values()); }

  // Keys absent from the text keep the defaults of the algorithm named by
  // `algo` (or pmoe-sac).
  static RunConfig parse(const std::string& text) {
    const KeyValues kv = parse_key_values(text);
    RunConfig c;
    if (const auto it = kv.find("algo"); it != kv.end()) c.trainer = TrainerConfig::defaults(parse_algorithm(it->second));
    for (const auto& [key, value] : kv) c.apply(key, value);
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot write config file " + path);
    out << serialize();
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline std::unique_ptr<Env> make_env(const RunConfig& c) {
  if (c.env == "bandit") return std::make_unique<Bandit>();
  if (c.env == "target-reaching") {
    TargetReachingConfig tc;
    tc.obstacles = c.obstacles;
    tc.fixed_layout = c.fixed_layout;
    tc.layout_seed = c.layout_seed;
    return std::make_unique<TargetReaching>(tc, mix_seed(c.trainer.seed, 5));
  }
  throw ConfigError("unknown env '" + c.env + "'");
}

}  // namespace pmoe
