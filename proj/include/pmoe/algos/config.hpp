#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <system_error>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/primitive_update/primitive_update.hpp"
#include "pmoe/routers/routers.hpp"

namespace pmoe {

enum class Algorithm { pmoe_sac, pmoe_ppo, sac, gating_sac, gumbel_sac, reinforce_sac };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::pmoe_sac: return "pmoe-sac";
    case Algorithm::pmoe_ppo: return "pmoe-ppo";
    case Algorithm::sac: return "sac";
    case Algorithm::gating_sac: return "gating-sac";
    case Algorithm::gumbel_sac: return "gumbel-sac";
    case Algorithm::reinforce_sac: return "reinforce-sac";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  for (Algorithm a : {Algorithm::pmoe_sac, Algorithm::pmoe_ppo, Algorithm::sac, Algorithm::gating_sac,
                      Algorithm::gumbel_sac, Algorithm::reinforce_sac}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline bool is_ppo(Algorithm a) { return a == Algorithm::pmoe_ppo; }

// Router that the SAC-family algorithm uses for its routing parameters.
inline RouterKind router_of(Algorithm a) {
  switch (a) {
    case Algorithm::gating_sac: return RouterKind::gating;
    case Algorithm::gumbel_sac: return RouterKind::gumbel;
    case Algorithm::reinforce_sac: return RouterKind::reinforce;
    default: return RouterKind::freq;
  }
}

inline Algorithm sac_variant(RouterKind r) {
  switch (r) {
    case RouterKind::gating: return Algorithm::gating_sac;
    case RouterKind::gumbel: return Algorithm::gumbel_sac;
    case RouterKind::reinforce: return Algorithm::reinforce_sac;
    case RouterKind::freq: return Algorithm::pmoe_sac;
  }
  return Algorithm::pmoe_sac;
}

// ---- key/value text -------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

inline std::string format_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty() || !parts.empty()) parts.push_back(cur);
  return parts;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  for (const std::string& p : split(s, ',')) out.push_back(parse_uint(key, p));
  return out;
}

inline std::string format_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const std::string& p : split(s, ',')) out.push_back(parse_double(key, p));
  return out;
}

// One "key = value" per line; '#' starts a comment line.
inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (const std::string& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (kv.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

// ---- trainer configuration -------------------------------------------------

struct TrainerConfig {
  Algorithm algorithm = Algorithm::pmoe_sac;
  std::size_t k = 4;
  double alpha = 0.2;
  double lr_routing = 1e-3;
  double lr_primitive = 1e-3;
  double lr_critic = 1e-3;
  double gamma = 0.99;
  double tau = 0.995;
  std::size_t batch_size = 100;
  // SAC: cap on episode length. PPO: on-policy steps collected per iteration.
  std::size_t episode_length = 1000;
  std::size_t total_steps = 100000;
  PrimitiveMode mode = PrimitiveMode::bpm;
  std::uint64_t seed = 0;
  std::size_t warmup_steps = 1000;
  std::size_t update_every = 1;
  std::size_t replay_capacity = 1000000;
  std::vector<std::size_t> policy_hidden{256, 256};
  std::vector<std::size_t> critic_hidden{256, 256};
  double gumbel_temperature = 1.0;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  std::size_t ppo_epochs = 20;
  std::size_t eval_every = 5000;
  std::size_t eval_episodes = 10;
  std::size_t checkpoint_every = 0;

  // Table defaults for the algorithm family (SAC-style or PPO-style).
  static TrainerConfig defaults(Algorithm algorithm) {
    TrainerConfig c;
    c.algorithm = algorithm;
    if (is_ppo(algorithm)) {
      c.lr_routing = c.lr_primitive = c.lr_critic = 3e-4;
      c.batch_size = 64;
      c.episode_length = 2000;
      c.policy_hidden = {64, 64};
      c.critic_hidden = {64, 64};
      c.warmup_steps = 0;
    }
    if (algorithm == Algorithm::sac) c.k = 1;
    return c;
  }

  void validate() const {
    if (k == 0) throw ConfigError("k must be >= 1");
    if (algorithm == Algorithm::sac && k != 1) throw ConfigError("algorithm 'sac' is unimodal; k must be 1");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (episode_length == 0) throw ConfigError("episode_length must be >= 1");
    if (update_every == 0) throw ConfigError("update_every must be >= 1");
    if (replay_capacity == 0) throw ConfigError("replay_capacity must be >= 1");
    if (!(gumbel_temperature > 0.0)) throw ConfigError("gumbel_temperature must be > 0");
    if (!(clip_ratio > 0.0)) throw ConfigError("clip_ratio must be > 0");
    if (lr_routing <= 0.0 || lr_primitive <= 0.0 || lr_critic <= 0.0) throw ConfigError("learning rates must be > 0");
  }

  void to_key_values(KeyValues& kv) const {
    kv["algo"] = to_string(algorithm);
    kv["k"] = std::to_string(k);
    kv["alpha"] = format_double(alpha);
    kv["lr_routing"] = format_double(lr_routing);
    kv["lr_primitive"] = format_double(lr_primitive);
    kv["lr_critic"] = format_double(lr_critic);
    kv["gamma"] = format_double(gamma);
    kv["tau"] = format_double(tau);
    kv["batch_size"] = std::to_string(batch_size);
    kv["episode_length"] = std::to_string(episode_length);
    kv["total_steps"] = std::to_string(total_steps);
    kv["mode"] = to_string(mode);
    kv["seed"] = std::to_string(seed);
    kv["warmup_steps"] = std::to_string(warmup_steps);
    kv["update_every"] = std::to_string(update_every);
    kv["replay_capacity"] = std::to_string(replay_capacity);
    kv["policy_hidden"] = format_sizes(policy_hidden);
    kv["critic_hidden"] = format_sizes(critic_hidden);
    kv["gumbel_temperature"] = format_double(gumbel_temperature);
    kv["gae_lambda"] = format_double(gae_lambda);
    kv["clip_ratio"] = format_double(clip_ratio);
    kv["ppo_epochs"] = std::to_string(ppo_epochs);
    kv["eval_every"] = std::to_string(eval_every);
    kv["eval_episodes"] = std::to_string(eval_episodes);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
  }

  // Applies one key; returns false when the key is not a trainer key.
  bool apply(const std::string& key, const std::string& value) {
    const std::map<std::string, std::function<void(const std::string&)>> setters{
        {"algo", [&](const std::string& v) { algorithm = parse_algorithm(v); }},
        {"k", [&](const std::string& v) { k = parse_uint(key, v); }},
        {"alpha", [&](const std::string& v) { alpha = parse_double(key, v); }},
        {"lr_routing", [&](const std::string& v) { lr_routing = parse_double(key, v); }},
        {"lr_primitive", [&](const std::string& v) { lr_primitive = parse_double(key, v); }},
        {"lr_critic", [&](const std::string& v) { lr_critic = parse_double(key, v); }},
        {"gamma", [&](const std::string& v) { gamma = parse_double(key, v); }},
        {"tau", [&](const std::string& v) { tau = parse_double(key, v); }},
        {"batch_size", [&](const std::string& v) { batch_size = parse_uint(key, v); }},
        {"episode_length", [&](const std::string& v) { episode_length = parse_uint(key, v); }},
        {"total_steps", [&](const std::string& v) { total_steps = parse_uint(key, v); }},
        {"mode", [&](const std::string& v) { mode = parse_primitive_mode(v); }},
        {"seed", [&](const std::string& v) { seed = parse_uint(key, v); }},
        {"warmup_steps", [&](const std::string& v) { warmup_steps = parse_uint(key, v); }},
        {"update_every", [&](const std::string& v) { update_every = parse_uint(key, v); }},
        {"replay_capacity", [&](const std::string& v) { replay_capacity = parse_uint(key, v); }},
        {"policy_hidden", [&](const std::string& v) { policy_hidden = parse_sizes(key, v); }},
        {"critic_hidden", [&](const std::string& v) { critic_hidden = parse_sizes(key, v); }},
        {"gumbel_temperature", [&](const std::string& v) { gumbel_temperature = parse_double(key, v); }},
        {"gae_lambda", [&](const std::string& v) { gae_lambda = parse_double(key, v); }},
        {"clip_ratio", [&](const std::string& v) { clip_ratio = parse_double(key, v); }},
        {"ppo_epochs", [&](const std::string& v) { ppo_epochs = parse_uint(key, v); }},
        {"eval_every", [&](const std::string& v) { eval_every = parse_uint(key, v); }},
        {"eval_episodes", [&](const std::string& v) { eval_episodes = parse_uint(key, v); }},
        {"checkpoint_every", [&](const std::string& v) { checkpoint_every = parse_uint(key, v); }},
    };
    const auto it = setters.find(key);
    if (it == setters.end()) return false;
    it->second(value);
    return true;
  }

  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

}  // namespace pmoe
