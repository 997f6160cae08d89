// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace atgrpo {

/// One training step's record. Serialized as one JSON object per line.
struct StepMetrics {
  std::string method;
  long step = 0;
  double alpha = 1.0;
  // Greedy evaluation (Avg.r / Avg.L); empty on steps without evaluation.
  std::optional<double> avg_reward;
  std::optional<double> avg_length;
  std::optional<int> greedy_first_action;
  // Rollout tree.
  std::uint64_t budget = 0;  // environment interactions (nodes created)
  std::uint64_t observation_nodes = 0;
  std::uint64_t observation_reused = 0;
  std::uint64_t population_nodes = 0;
  int groups = 0;
  double train_reward = 0.0;  // mean immediate reward of group members
  // Update.
  double kl = 0.0;
  bool kl_clamped = false;
  double grad_norm = 0.0;
  double update_norm = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& j);

/// Shortest decimal that reads back as the same double.
std::string format_number(double v);

/// Compact single-line JSON (no trailing newline).
std::string to_jsonl(const StepMetrics& m);

}  // namespace atgrpo
