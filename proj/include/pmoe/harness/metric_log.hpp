#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmoe/algos/agent.hpp"
#include "pmoe/core/error.hpp"

namespace pmoe {

inline constexpr int kMetricSchemaVersion = 1;
inline constexpr const char* kMetricSchemaName = "pmoe-metrics";

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double read_number(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return kMissing;
  return it->get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["updates"] = r.updates;
  j["episodes"] = r.episodes;
  j["episode_return"] = detail::number_or_null(r.episode_return);
  j["eval_return"] = detail::number_or_null(r.eval_return);
  j["eval_return_std"] = detail::number_or_null(r.eval_return_std);
  j["success_rate"] = detail::number_or_null(r.success_rate);
  j["loss_freq"] = detail::number_or_null(r.loss_freq);
  j["loss_primitive"] = detail::number_or_null(r.loss_primitive);
  j["loss_critic"] = detail::number_or_null(r.loss_critic);
  j["routing_entropy"] = detail::number_or_null(r.routing_entropy);
  j["weights"] = r.weights;
  return j;
}

inline MetricRecord metric_from_json(const nlohmann::json& j) {
  MetricRecord r;
  r.step = j.at("step").get<std::size_t>();
  r.updates = j.at("updates").get<std::size_t>();
  r.episodes = j.at("episodes").get<std::size_t>();
  r.episode_return = detail::read_number(j, "episode_return");
  r.eval_return = detail::read_number(j, "eval_return");
  r.eval_return_std = detail::read_number(j, "eval_return_std");
  r.success_rate = detail::read_number(j, "success_rate");
  r.loss_freq = detail::read_number(j, "loss_freq");
  r.loss_primitive = detail::read_number(j, "loss_primitive");
  r.loss_critic = detail::read_number(j, "loss_critic");
  r.routing_entropy = detail::read_number(j, "routing_entropy");
  r.weights = j.value("weights", std::vector<double>{});
  return r;
}

// Line-delimited JSON: a schema header, then one record per line, flushed as written.
class MetricLog {
 public:
  explicit MetricLog(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw UsageError("cannot open metric log " + path);
    const nlohmann::json header{{"schema", kMetricSchemaName}, {"version", kMetricSchemaVersion}};
    out_ << header.dump() << '\n';
    out_.flush();
  }

  void append(const MetricRecord& r) {
    if (count_ > 0 && r.step < last_step_) throw UsageError("metric log steps must be non-decreasing");
    last_step_ = r.step;
    ++count_;
    out_ << to_json(r).dump() << '\n';
    out_.flush();
  }

  std::size_t size() const { return count_; }

 private:
  std::ofstream out_;
  std::size_t count_ = 0;
  std::size_t last_step_ = 0;
};

inline std::vector<MetricRecord> read_metric_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read metric log " + path);
  std::string line;
  if (!std::getline(in, line)) throw UsageError(path + ": empty metric log");
  const nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("schema", "") != kMetricSchemaName) {
    throw UsageError(path + ": missing metric log header");
  }
  if (header.value("version", 0) != kMetricSchemaVersion) throw UsageError(path + ": unsupported metric log version");
  std::vector<MetricRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw UsageError(path + ": malformed record line");
    records.push_back(metric_from_json(j));
  }
  return records;
}

}  // namespace pmoe
