// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "atgrpo/rng.hpp"
#include "atgrpo/types.hpp"

namespace atgrpo {

inline constexpr const char* kContinueSignal = "[Continue]";
inline constexpr const char* kTerminateSignal = "[Terminate]";

/// Strictness at RL step `step`: 1 + lambda * floor(step / 10).
double alpha_schedule(long step, double lambda);

/// min(alpha * 2 * base_p, 1). A base probability of 0.5 or more always terminates at alpha >= 1.
double termination_probability(double base_p, double alpha);

enum class TerminationMode {
  deterministic,  // terminate iff p == 1
  stochastic,     // additionally terminate with probability p
};

/// Synthetic user with hidden per-topic interest. One action per topic.
///
/// Termination logit: base_logit - engagement_weight * e' + trap_penalty_rate * trap_count
/// (minus trap_bonus when the trap topic is chosen), where the engagement after the
/// action is e' = e * engagement_decay + interest[a] + exploration_unlock * [first hit
/// of a topic with interest >= 0.8].
struct EnvConfig {
  int num_topics = 4;
  std::vector<double> interest_profile{0.1, 0.3, 0.9, 0.2};
  double engagement_decay = 0.7;
  double engagement_weight = 1.0;
  double trap_bonus = 0.0;
  double trap_penalty_rate = 0.0;
  int trap_action = -1;  // -1: no trap topic
  double exploration_unlock = 1.0;
  double base_logit = 0.5;

  void validate() const;
};

/// Tabular two-action "immediate reward trap". Action 0 is the trap, action 1 explores.
///
/// base_p(trap)    = trap_base_p + trap_increment * prior_traps
/// base_p(explore) = (explore_uses >= unlock_uses ? explore_unlocked_p : explore_base_p)
///                   + trap_increment * prior_traps
///
/// Every prior trap use raises the base probability of all later actions, so a
/// trap-first opening closes the exploration route once alpha grows.
struct TrapConfig {
  double trap_base_p = 0.05;
  double trap_increment = 0.12;
  double explore_base_p = 0.35;
  double explore_unlocked_p = 0.05;
  int unlock_uses = 2;

  static constexpr ActionId kTrap = 0;
  static constexpr ActionId kExplore = 1;

  void validate() const;
};

/// Probability P([Terminate] | H, D) of the topic user before alpha scaling. Output in (0, 1).
double base_terminate_prob(const EnvConfig& config, const EnvState& state, ActionId action);
double base_terminate_prob(const TrapConfig& config, const EnvState& state, ActionId action);

/// Fixed-length context features: one-hot of the last agent action (zeros before
/// the first turn), turn_index / horizon, engagement, last_p. Length num_actions + 3.
std::vector<double> encode_context(std::span<const TurnRecord> history, const EnvState& state,
                                   int num_actions, int horizon);
/// encode_context into a caller-provided buffer of length num_actions + 3.
void encode_context_into(std::span<const TurnRecord> history, const EnvState& state, int num_actions,
                         int horizon, std::span<double> out);

struct StepResult {
  TurnRecord turn;
  EnvState state;
};

/// The frozen user agent. Implementations are immutable after construction and
/// safe to call from several threads; all per-branch state lives in EnvState.
class UserEnvironment {
 public:
  explicit UserEnvironment(double threshold_lambda, TerminationMode mode)
      : lambda_(threshold_lambda), mode_(mode) {}
  virtual ~UserEnvironment() = default;

  virtual int num_actions() const = 0;
  virtual std::string name() const = 0;

  /// Remote users need the full dialogue path; local ones read only EnvState.
  virtual bool needs_history() const { return false; }

  /// One exchange. `history` holds the turns before this one (may be empty when
  /// needs_history() is false). Throws UsageError on a terminated state and
  /// DomainError on an invalid action.
  virtual StepResult step(std::span<const TurnRecord> history, const EnvState& state,
                          ActionId action, long step_count, SplitMix64& rng) const = 0;

  EnvState initial_state(long step_count) const;
  double threshold_lambda() const { return lambda_; }
  TerminationMode mode() const { return mode_; }

 protected:
  /// Shared tail of local step(): applies alpha, decides termination, advances the turn.
  StepResult finish_step(EnvState next, double base_p, long step_count, SplitMix64& rng,
                         ActionId action) const;
  void check_step(const EnvState& state, ActionId action) const;

 private:
  double lambda_;
  TerminationMode mode_;
};

class TopicUser final : public UserEnvironment {
 public:
  TopicUser(EnvConfig config, double threshold_lambda,
            TerminationMode mode = TerminationMode::deterministic);

  int num_actions() const override { return config_.num_topics; }
  std::string name() const override { return "topics"; }
  StepResult step(std::span<const TurnRecord> history, const EnvState& state, ActionId action,
                  long step_count, SplitMix64& rng) const override;

  const EnvConfig& config() const { return config_; }

 private:
  EnvConfig config_;
};

class TrapUser final : public UserEnvironment {
 public:
  TrapUser(TrapConfig config, double threshold_lambda,
           TerminationMode mode = TerminationMode::deterministic);

  int num_actions() const override { return 2; }
  std::string name() const override { return "trap"; }
  StepResult step(std::span<const TurnRecord> history, const EnvState& state, ActionId action,
                  long step_count, SplitMix64& rng) const override;

  const TrapConfig& config() const { return config_; }

 private:
  TrapConfig config_;
};

/// Engagement reached after taking `action` from `state` in the topic model.
double engagement_after(const EnvConfig& config, const EnvState& state, ActionId action);

/// A topic user whose termination probability stays far below 1 for any
/// alpha below 200, so deterministic dialogues always run to the depth cap.
EnvConfig non_terminating_config(int num_topics = 2);

}  // namespace atgrpo
