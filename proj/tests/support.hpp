// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "atgrpo/dialogue_tree.hpp"
#include "atgrpo/user_env.hpp"

namespace testing_support {

using namespace atgrpo;

// User whose base termination probability is an arbitrary function of the
// state and action. Handy for forcing terminations at chosen places.
class ScriptedUser final : public UserEnvironment {
 public:
  using Rule = std::function<double(const EnvState&, ActionId)>;
  ScriptedUser(int actions, Rule rule, double lambda = 0.0)
      : UserEnvironment(lambda, TerminationMode::deterministic), actions_(actions), rule_(std::move(rule)) {}

  int num_actions() const override { return actions_; }
  std::string name() const override { return "scripted"; }
  StepResult step(std::span<const TurnRecord>, const EnvState& state, ActionId action, long step_count,
                  SplitMix64& rng) const override {
    check_step(state, action);
    EnvState next = state;
    if (action == 0) ++next.trap_count;
    return finish_step(next, rule_(state, action), step_count, rng, action);
  }

 private:
  int actions_;
  Rule rule_;
};

inline NodeSample sample(ActionId action, double p, bool terminated = false, int turn = 1) {
  NodeSample s;
  s.turn.agent_action = action;
  s.turn.p_term = p;
  s.turn.reward = 1.0 - p;
  s.turn.terminated = terminated;
  s.turn.user_signal = terminated ? kTerminateSignal : kContinueSignal;
  s.state.turn_index = turn;
  s.state.last_p = p;
  s.state.terminated = terminated;
  return s;
}

inline DialogueTree small_tree(int max_depth, int roots) {
  std::vector<RootContext> contexts(static_cast<std::size_t>(roots));
  std::vector<NodeSample> samples;
  for (int j = 0; j < roots; ++j) samples.push_back(sample(0, 0.1));
  return DialogueTree(max_depth, std::move(contexts), std::move(samples));
}

}  // namespace testing_support
