// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace atgrpo {

using ActionId = int;

/// Tunables of the tree-based trainer. Defaults are the reference run
/// (W = 8, w = 2, gamma = 2, omega = 0.3, L = 10, eps = 0.2, beta = 0.01,
/// lambda = 0.02); the learning rate is sized for the linear-softmax policy.
struct Hyperparams {
  int group_size = 8;          // W
  int adaptive_width = 2;      // w
  double gamma = 2.0;          // observation-range scale
  double omega = 0.3;          // immediate vs. long-term weight
  int max_depth = 10;          // L, max dialogue exchanges
  double clip_epsilon = 0.2;
  double kl_beta = 0.01;
  double threshold_lambda = 0.02;
  double learning_rate = 0.5;
  std::uint64_t rng_seed = 0;

  /// Throws ConfigError naming the first field that violates its range.
  void validate() const;
};

/// Stable view of `signal` that lives until the process exits. Equal strings
/// share storage.
std::string_view intern_signal(std::string_view signal);

/// One dialogue exchange: the agent's action and the user's reaction to it.
struct TurnRecord {
  ActionId agent_action = -1;
  bool terminated = false;
  std::string_view user_signal;  // interned, see intern_signal
  double p_term = 0.0;   // termination probability after the alpha scaling
  double reward = 1.0;   // always 1 - p_term
};

/// Per-branch environment state. Value type, copied at every branch point.
struct EnvState {
  double engagement = 0.0;
  double last_p = 0.0;       // propagated termination probability, 0 before the first turn
  double alpha = 1.0;        // strictness, frozen per tree
  std::uint64_t visited_topics = 0;  // bitmask of high-interest topics already unlocked
  int turn_index = 0;
  int trap_count = 0;
  int explore_count = 0;
  bool terminated = false;

  bool operator==(const EnvState&) const = default;
};

}  // namespace atgrpo
