// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/types.hpp"

#include <cmath>
#include <mutex>
#include <string>
#include <unordered_set>

#include "atgrpo/errors.hpp"

namespace atgrpo {

std::string_view intern_signal(std::string_view signal) {
  static std::mutex mutex;
  static std::unordered_set<std::string> pool;
  std::lock_guard lock(mutex);
  return *pool.emplace(signal).first;
}

void Hyperparams::validate() const {
  if (group_size < 2) throw ConfigError("group_size_W", "must be >= 2");
  if (adaptive_width < 2) throw ConfigError("adaptive_width_w", "must be >= 2");
  if (adaptive_width > group_size) throw ConfigError("adaptive_width_w", "must not exceed group_size_W");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma", "must be > 0");
  if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("omega", "must lie in [0,1]");
  if (max_depth < 1) throw ConfigError("max_depth_L", "must be >= 1");
  if (!(clip_epsilon > 0.0) || !std::isfinite(clip_epsilon)) throw ConfigError("clip_epsilon", "must be > 0");
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) throw ConfigError("kl_beta", "must be >= 0");
  if (!(threshold_lambda >= 0.0) || !std::isfinite(threshold_lambda)) {
    throw ConfigError("threshold_lambda", "must be >= 0");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate", "must be >= 0");
  }
}

}  // namespace atgrpo
