// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace atgrpo {

/// Observation-subtree budget sum_{i=1}^{L} W * sum_{t=1}^{l_i} w^t, exact.
std::uint64_t predicted_budget(int group_size, int width, double gamma, int max_depth);

/// Leaves-only count sum_{i=1}^{L} W * w^{l_i} (every group's deepest observed layer).
std::uint64_t leaf_budget(int group_size, int width, double gamma, int max_depth);

/// Polynomial upper bound (w / (w - 1)) * sqrt(w) * W * L^(1 + gamma ln w). Needs w >= 2.
double budget_bound(int group_size, int width, double gamma, int max_depth);

/// Growth exponent C = 1 + gamma ln w.
double budget_exponent(int width, double gamma);

/// Chain-rollout interactions without termination: W * L.
std::uint64_t chain_budget(int group_size, int max_depth);

/// Full W-ary tree interactions without termination: sum_{t=1}^{L} W^t.
std::uint64_t full_tree_budget(int group_size, int max_depth);

/// Least-squares slope of ln S against ln L. Needs >= 4 points with distinct L > 0 and S > 0.
double scaling_fit(std::span<const std::pair<double, double>> points);

struct DialogueMetrics {
  double avg_r = 0.0;  // mean over episodes of summed turn rewards
  double avg_l = 0.0;  // mean number of exchanges, the terminating one included
};

/// Avg.r and Avg.L over per-episode reward sequences. Throws on empty input.
DialogueMetrics avg_metrics(std::span<const std::vector<double>> episodes);

}  // namespace atgrpo
