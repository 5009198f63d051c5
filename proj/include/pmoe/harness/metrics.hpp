#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pmoe/algos/agent.hpp"
#include "pmoe/algos/config.hpp"
#include "pmoe/core/error.hpp"
#include "pmoe/envs/env.hpp"
#include "pmoe/envs/target_reaching.hpp"

namespace pmoe {

struct CurvePoint {
  double step = 0.0;
  double value = 0.0;
};
using Curve = std::vector<CurvePoint>;

// Evaluation-return curve of a log, skipping records without an evaluation.
inline Curve eval_curve(const std::vector<MetricRecord>& records) {
  Curve c;
  for (const MetricRecord& r : records) {
    if (std::isfinite(r.eval_return)) c.push_back({static_cast<double>(r.step), r.eval_return});
  }
  return c;
}

inline double interpolate(const Curve& c, double x) {
  if (x <= c.front().step) return c.front().value;
  if (x >= c.back().step) return c.back().value;
  const auto hi = std::lower_bound(c.begin(), c.end(), x, [](const CurvePoint& p, double v) { return p.step < v; });
  const auto lo = hi - 1;
  if (hi->step == x) return hi->value;
  const double t = (x - lo->step) / (hi->step - lo->step);
  return lo->value + t * (hi->value - lo->value);
}

inline double trapezoid(const Curve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i) area += 0.5 * (c[i].value + c[i - 1].value) * (c[i].step - c[i - 1].step);
  return area;
}

// 100 * area(curve) / area(reference), both integrated by the trapezoid rule
// on the union of their step grids (linear interpolation in between).
inline double auc(const Curve& curve, const Curve& reference) {
  if (curve.empty() || reference.empty()) throw UsageError("auc: empty series");
  for (const Curve* c : {&curve, &reference}) {
    for (std::size_t i = 1; i < c->size(); ++i) {
      if (!((*c)[i].step > (*c)[i - 1].step)) throw UsageError("auc: steps must be strictly increasing");
    }
  }
  if (curve.front().step != reference.front().step || curve.back().step != reference.back().step) {
    throw UsageError("auc: series must cover the same step range");
  }
  std::set<double> grid;
  for (const CurvePoint& p : curve) grid.insert(p.step);
  for (const CurvePoint& p : reference) grid.insert(p.step);
  Curve a, b;
  for (double x : grid) {
    a.push_back({x, interpolate(curve, x)});
    b.push_back({x, interpolate(reference, x)});
  }
  const double ref_area = trapezoid(b);
  if (ref_area == 0.0) throw UsageError("auc: reference area is zero");
  return 100.0 * (trapezoid(a) / ref_area);
}

inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += xs[j];
    out[i] = s / static_cast<double>(i - lo + 1);
  }
  return out;
}

// Fraction of cells of a grid x grid occupancy map over the playground visited by `positions`.
inline double exploration_coverage(const std::vector<std::pair<double, double>>& positions, std::size_t grid = 50,
                                   double half_extent = TargetReaching::kHalfExtent) {
  if (grid == 0) throw UsageError("exploration_coverage: grid must be positive");
  std::vector<char> seen(grid * grid, 0);
  std::size_t count = 0;
  const double cell = 2.0 * half_extent / static_cast<double>(grid);
  auto index = [&](double v) {
    const double i = std::floor((v + half_extent) / cell);
    return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(grid - 1)));
  };
  for (const auto& [x, y] : positions) {
    const std::size_t id = index(x) * grid + index(y);
    if (!seen[id]) {
      seen[id] = 1;
      ++count;
    }
  }
  return static_cast<double>(count) / static_cast<double>(grid * grid);
}

// ---- per-primitive action dumps -----------------------------------------------

struct ActionDumpRow {
  std::size_t episode = 0;
  std::size_t step = 0;
  std::vector<double> state;
  std::vector<std::vector<double>> actions;  // [K][A], each primitive's mean action in env units
  std::vector<double> weights;
  std::size_t component = 0;
};

struct ActionDump {
  std::size_t k = 0;
  std::size_t action_dim = 0;
  std::size_t observation_dim = 0;
  std::vector<ActionDumpRow> rows;
};

// Mean over states of min_{i != j} ||a_i(s) - a_j(s)||; nullopt when K < 2.
inline std::optional<double> primitive_separation(const ActionDump& dump) {
  if (dump.k < 2 || dump.rows.empty()) return std::nullopt;
  double total = 0.0;
  for (const ActionDumpRow& row : dump.rows) {
    double best = INFINITY;
    for (std::size_t i = 0; i < dump.k; ++i) {
      for (std::size_t j = i + 1; j < dump.k; ++j) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < dump.action_dim; ++d) {
          const double diff = row.actions[i][d] - row.actions[j][d];
          d2 += diff * diff;
        }
        best = std::min(best, std::sqrt(d2));
      }
    }
    total += best;
  }
  return total / static_cast<double>(dump.rows.size());
}

// Mean action of each primitive in env units: bound * tanh(mu) for squashed
// policies, bound * clip(mu) otherwise.
inline std::vector<std::vector<double>> primitive_mean_actions(const MixtureOutput& out, double bound, bool squashed) {
  std::vector<std::vector<double>> actions(out.k(), std::vector<double>(out.action_dim()));
  for (std::size_t i = 0; i < out.k(); ++i) {
    for (std::size_t d = 0; d < out.action_dim(); ++d) {
      const double mu = out.mean(i, d);
      actions[i][d] = bound * (squashed ? std::tanh(mu) : std::clamp(mu, -1.0, 1.0));
    }
  }
  return actions;
}

// Rolls out `episodes` seeded episodes with the agent and records every visited state.
inline ActionDump collect_action_dump(const Agent& agent, const Env& env_template, std::size_t episodes,
                                      std::uint64_t seed, std::size_t max_episode_steps = 1000) {
  std::unique_ptr<Env> env = env_template.clone();
  const bool squashed = !is_ppo(agent.config().algorithm);
  ActionDump dump;
  dump.action_dim = env->action_dim();
  dump.observation_dim = env->observation_dim();
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Rng rng(mix_seed(seed, 2 * ep + 1));
    std::vector<double> obs = env->reset(mix_seed(seed, 2 * ep));
    for (std::size_t t = 0; t < max_episode_steps; ++t) {
      const MixtureOutput out = agent.mixture(obs);
      const Action a = agent.act(obs, rng);
      ActionDumpRow row;
      row.episode = ep;
      row.step = t;
      row.state = obs;
      row.actions = primitive_mean_actions(out, env->action_bound(), squashed);
      row.weights = out.weights;
      row.component = a.component;
      dump.k = out.k();
      dump.rows.push_back(std::move(row));
      std::vector<double> env_action(a.action.size());
      for (std::size_t d = 0; d < env_action.size(); ++d) {
        env_action[d] = std::clamp(a.action[d], -1.0, 1.0) * env->action_bound();
      }
      const EnvStep step = env->step(env_action);
      obs = step.observation;
      if (step.done) break;
    }
  }
  return dump;
}

inline void write_action_dump(const ActionDump& dump, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << "episode,step";
  for (std::size_t c = 0; c < dump.observation_dim; ++c) out << ",s" << c;
  for (std::size_t i = 0; i < dump.k; ++i) {
    for (std::size_t d = 0; d < dump.action_dim; ++d) out << ",a" << i << "_" << d;
  }
  for (std::size_t i = 0; i < dump.k; ++i) out << ",w" << i;
  out << ",component\n";
  for (const ActionDumpRow& row : dump.rows) {
    out << row.episode << ',' << row.step;
    for (double v : row.state) out << ',' << format_double(v);
    for (const auto& a : row.actions) {
      for (double v : a) out << ',' << format_double(v);
    }
    for (double w : row.weights) out << ',' << format_double(w);
    out << ',' << row.component << '\n';
  }
}

inline ActionDump read_action_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw UsageError(path + ": empty action dump");
  ActionDump dump;
  const std::vector<std::string> header = split(line, ',');
  std::size_t max_i = 0, max_d = 0;
  bool any_action = false;
  for (const std::string& h : header) {
    if (h.size() > 1 && h[0] == 's' && h != "step") ++dump.observation_dim;
    if (h.size() > 1 && h[0] == 'a' && h.find('_') != std::string::npos) {
      any_action = true;
      const auto us = h.find('_');
      max_i = std::max<std::size_t>(max_i, parse_uint(h, h.substr(1, us - 1)));
      max_d = std::max<std::size_t>(max_d, parse_uint(h, h.substr(us + 1)));
    }
  }
  if (!any_action) throw UsageError(path + ": no per-primitive action columns");
  dump.k = max_i + 1;
  dump.action_dim = max_d + 1;
  const std::size_t expected = 2 + dump.observation_dim + dump.k * dump.action_dim + dump.k + 1;
  if (header.size() != expected) throw UsageError(path + ": unexpected column layout");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != expected) throw UsageError(path + ": row width differs from header");
    ActionDumpRow row;
    std::size_t c = 0;
    row.episode = parse_uint("episode", f[c++]);
    row.step = parse_uint("step", f[c++]);
    for (std::size_t i = 0; i < dump.observation_dim; ++i) row.state.push_back(parse_double("state", f[c++]));
    row.actions.assign(dump.k, std::vector<double>(dump.action_dim));
    for (std::size_t i = 0; i < dump.k; ++i) {
      for (std::size_t d = 0; d < dump.action_dim; ++d) row.actions[i][d] = parse_double("action", f[c++]);
    }
    for (std::size_t i = 0; i < dump.k; ++i) row.weights.push_back(parse_double("weight", f[c++]));
    row.component = parse_uint("component", f[c++]);
    dump.rows.push_back(std::move(row));
  }
  return dump;
}

// w(s_t) at every step of one seeded episode.
inline std::vector<std::vector<double>> routing_probability_trace(const Agent& agent, const Env& env_template,
                                                                  std::uint64_t seed, std::size_t episode = 0,
                                                                  std::size_t max_episode_steps = 1000) {
  ActionDump dump = collect_action_dump(agent, env_template, episode + 1, seed, max_episode_steps);
  std::vector<std::vector<double>> trace;
  for (ActionDumpRow& row : dump.rows) {
    if (row.episode == episode) trace.push_back(std::move(row.weights));
  }
  return trace;
}

inline void write_routing_trace(const std::vector<std::vector<double>>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  const std::size_t k = trace.empty() ? 0 : trace.front().size();
  out << "step";
  for (std::size_t i = 0; i < k; ++i) out << ",w" << i;
  out << '\n';
  for (std::size_t t = 0; t < trace.size(); ++t) {
    out << t;
    for (double w : trace[t]) out << ',' << format_double(w);
    out << '\n';
  }
}

// Streams env-step events as (episode, step, x, y, vx, vy, ax, ay, reward, component).
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw UsageError("cannot write " + path);
    out_ << "episode,step,x,y,vx,vy,ax,ay,reward,component\n";
  }

  void write(const EnvStepEvent& e) {
    out_ << e.episode << ',' << e.episode_step;
    for (std::size_t i = 0; i < 4; ++i) out_ << ',' << (i < e.trace.size() ? format_double(e.trace[i]) : "");
    for (std::size_t i = 0; i < 2; ++i) out_ << ',' << (i < e.action.size() ? format_double(e.action[i]) : "");
    out_ << ',' << format_double(e.reward) << ',' << e.component << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace pmoe
