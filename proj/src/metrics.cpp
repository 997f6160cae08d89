// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/metrics.hpp"

#include <charconv>

namespace atgrpo {
namespace {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

nlohmann::json to_json(const StepMetrics& m) {
  // nlohmann::json keeps keys sorted, so the serialized line is byte-stable.
  nlohmann::json j;
  j["method"] = m.method;
  j["step"] = m.step;
  j["alpha"] = m.alpha;
  j["avg_reward"] = optional_json(m.avg_reward);
  j["avg_length"] = optional_json(m.avg_length);
  j["greedy_first_action"] = optional_json(m.greedy_first_action);
  j["budget"] = m.budget;
  j["observation_nodes"] = m.observation_nodes;
  j["observation_reused"] = m.observation_reused;
  j["population_nodes"] = m.population_nodes;
  j["groups"] = m.groups;
  j["train_reward"] = m.train_reward;
  j["kl"] = m.kl;
  j["kl_clamped"] = m.kl_clamped;
  j["grad_norm"] = m.grad_norm;
  j["update_norm"] = m.update_norm;
  return j;
}

StepMetrics step_metrics_from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.method = j.at("method").get<std::string>();
  m.step = j.at("step").get<long>();
  m.alpha = j.at("alpha").get<double>();
  m.avg_reward = optional_from<double>(j, "avg_reward");
  m.avg_length = optional_from<double>(j, "avg_length");
  m.greedy_first_action = optional_from<int>(j, "greedy_first_action");
  m.budget = j.at("budget").get<std::uint64_t>();
  m.observation_nodes = j.at("observation_nodes").get<std::uint64_t>();
  m.observation_reused = j.at("observation_reused").get<std::uint64_t>();
  m.population_nodes = j.at("population_nodes").get<std::uint64_t>();
  m.groups = j.at("groups").get<int>();
  m.train_reward = j.at("train_reward").get<double>();
  m.kl = j.at("kl").get<double>();
  m.kl_clamped = j.at("kl_clamped").get<bool>();
  m.grad_norm = j.at("grad_norm").get<double>();
  m.update_norm = j.at("update_norm").get<double>();
  return m;
}

std::string to_jsonl(const StepMetrics& m) { return to_json(m).dump(); }

}  // namespace atgrpo
