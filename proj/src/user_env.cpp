// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/user_env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "atgrpo/errors.hpp"

namespace atgrpo {
namespace {

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

constexpr double kUnlockInterest = 0.8;

}  // namespace

double alpha_schedule(long step, double lambda) {
  if (step < 0) throw DomainError("alpha_schedule: step must be >= 0");
  return 1.0 + lambda * static_cast<double>(step / 10);
}

double termination_probability(double base_p, double alpha) {
  return std::clamp(alpha * 2.0 * base_p, 0.0, 1.0);
}

void EnvConfig::validate() const {
  if (num_topics < 1) throw ConfigError("num_topics", "must be >= 1");
  if (num_topics > 64) throw ConfigError("num_topics", "at most 64 topics are supported");
  if (static_cast<int>(interest_profile.size()) != num_topics) {
    throw ConfigError("interest_profile", "needs exactly num_topics entries");
  }
  for (double v : interest_profile) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("interest_profile", "entries must lie in [0,1]");
  }
  if (!(engagement_decay > 0.0 && engagement_decay < 1.0)) {
    throw ConfigError("engagement_decay", "must lie in (0,1)");
  }
  if (!(engagement_weight >= 0.0)) throw ConfigError("engagement_weight", "must be >= 0");
  if (!(trap_bonus >= 0.0)) throw ConfigError("trap_bonus", "must be >= 0");
  if (!(trap_penalty_rate >= 0.0)) throw ConfigError("trap_penalty_rate", "must be >= 0");
  if (!(exploration_unlock >= 0.0)) throw ConfigError("exploration_unlock", "must be >= 0");
  if (trap_action < -1 || trap_action >= num_topics) {
    throw ConfigError("trap_action", "must be -1 or a topic index");
  }
  if (!std::isfinite(base_logit)) throw ConfigError("base_logit", "must be finite");
}

void TrapConfig::validate() const {
  auto prob = [](const char* key, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(key, "must lie in [0,1]");
  };
  prob("trap_base_p", trap_base_p);
  prob("explore_base_p", explore_base_p);
  prob("explore_unlocked_p", explore_unlocked_p);
  if (!(trap_increment >= 0.0)) throw ConfigError("trap_increment", "must be >= 0");
  if (unlock_uses < 0) throw ConfigError("unlock_uses", "must be >= 0");
}

double engagement_after(const EnvConfig& config, const EnvState& state, ActionId action) {
  const double interest = config.interest_profile[static_cast<std::size_t>(action)];
  double e = state.engagement * config.engagement_decay + interest;
  const bool first_hit = interest >= kUnlockInterest &&
                         (state.visited_topics & (std::uint64_t{1} << action)) == 0;
  if (first_hit) e += config.exploration_unlock;
  return e;
}

namespace {

double topic_logit(const EnvConfig& config, const EnvState& state, ActionId action, double engagement) {
  double z = config.base_logit - config.engagement_weight * engagement +
             config.trap_penalty_rate * state.trap_count;
  if (action == config.trap_action) z -= config.trap_bonus;
  return z;
}

}  // namespace

double base_terminate_prob(const EnvConfig& config, const EnvState& state, ActionId action) {
  if (action < 0 || action >= config.num_topics) {
    throw DomainError("invalid action " + std::to_string(action) + " for " +
                      std::to_string(config.num_topics) + " topics");
  }
  return logistic(topic_logit(config, state, action, engagement_after(config, state, action)));
}

double base_terminate_prob(const TrapConfig& config, const EnvState& state, ActionId action) {
  double base = 0.0;
  switch (action) {
    case TrapConfig::kTrap:
      base = config.trap_base_p;
      break;
    case TrapConfig::kExplore:
      base = state.explore_count >= config.unlock_uses ? config.explore_unlocked_p
                                                       : config.explore_base_p;
      break;
    default:
      throw DomainError("invalid action " + std::to_string(action) + " for the trap user");
  }
  return std::clamp(base + config.trap_increment * state.trap_count, 0.0, 1.0);
}

void encode_context_into(std::span<const TurnRecord> history, const EnvState& state, int num_actions,
                         int horizon, std::span<double> f) {
  const auto base = static_cast<std::size_t>(num_actions);
  if (f.size() != base + 3) throw DomainError("encode_context: buffer has the wrong length");
  std::fill(f.begin(), f.end(), 0.0);
  if (!history.empty()) {
    const ActionId last = history.back().agent_action;
    if (last >= 0 && last < num_actions) f[static_cast<std::size_t>(last)] = 1.0;
  }
  f[base] = horizon > 0 ? static_cast<double>(state.turn_index) / horizon : 0.0;
  f[base + 1] = state.engagement;
  f[base + 2] = state.last_p;
}

std::vector<double> encode_context(std::span<const TurnRecord> history, const EnvState& state,
                                   int num_actions, int horizon) {
  std::vector<double> f(static_cast<std::size_t>(num_actions) + 3);
  encode_context_into(history, state, num_actions, horizon, f);
  return f;
}

EnvState UserEnvironment::initial_state(long step_count) const {
  EnvState s;
  s.alpha = alpha_schedule(step_count, lambda_);
  return s;
}

void UserEnvironment::check_step(const EnvState& state, ActionId action) const {
  if (state.terminated) throw UsageError("env_step on a terminated dialogue");
  if (action < 0 || action >= num_actions()) {
    throw DomainError("invalid action " + std::to_string(action) + " for environment " + name());
  }
}

StepResult UserEnvironment::finish_step(EnvState next, double base_p, long step_count,
                                        SplitMix64& rng, ActionId action) const {
  const double alpha = alpha_schedule(step_count, lambda_);
  const double p = termination_probability(base_p, alpha);
  bool terminated = p >= 1.0;
  if (mode_ == TerminationMode::stochastic && !terminated) terminated = rng.uniform() < p;

  StepResult out;
  out.turn.agent_action = action;
  out.turn.p_term = p;
  out.turn.reward = 1.0 - p;
  out.turn.terminated = terminated;
  out.turn.user_signal = terminated ? kTerminateSignal : kContinueSignal;
  next.alpha = alpha;
  next.last_p = p;
  next.turn_index += 1;
  next.terminated = terminated;
  out.state = next;
  return out;
}

TopicUser::TopicUser(EnvConfig config, double threshold_lambda, TerminationMode mode)
    : UserEnvironment(threshold_lambda, mode), config_(std::move(config)) {
  config_.validate();
}

StepResult TopicUser::step(std::span<const TurnRecord>, const EnvState& state, ActionId action,
                           long step_count, SplitMix64& rng) const {
  check_step(state, action);
  EnvState next = state;
  next.engagement = engagement_after(config_, state, action);
  const double base_p = logistic(topic_logit(config_, state, action, next.engagement));
  if (config_.interest_profile[static_cast<std::size_t>(action)] >= kUnlockInterest) {
    next.visited_topics |= std::uint64_t{1} << action;
  }
  if (action == config_.trap_action) ++next.trap_count;
  return finish_step(next, base_p, step_count, rng, action);
}

TrapUser::TrapUser(TrapConfig config, double threshold_lambda, TerminationMode mode)
    : UserEnvironment(threshold_lambda, mode), config_(config) {
  config_.validate();
}

StepResult TrapUser::step(std::span<const TurnRecord>, const EnvState& state, ActionId action,
                          long step_count, SplitMix64& rng) const {
  check_step(state, action);
  const double base_p = base_terminate_prob(config_, state, action);
  EnvState next = state;
  if (action == TrapConfig::kTrap) {
    ++next.trap_count;
  } else {
    ++next.explore_count;
  }
  next.engagement = config_.unlock_uses > 0
                        ? std::min(1.0, static_cast<double>(next.explore_count) / config_.unlock_uses)
                        : 1.0;
  return finish_step(next, base_p, step_count, rng, action);
}

EnvConfig non_terminating_config(int num_topics) {
  EnvConfig c;
  c.num_topics = num_topics;
  c.interest_profile.assign(static_cast<std::size_t>(num_topics), 0.5);
  c.exploration_unlock = 0.0;
  c.base_logit = -6.0;
  return c;
}

}  // namespace atgrpo
