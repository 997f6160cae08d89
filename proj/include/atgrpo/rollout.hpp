// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "atgrpo/dialogue_tree.hpp"
#include "atgrpo/policy.hpp"
#include "atgrpo/user_env.hpp"

namespace atgrpo {

/// Policy input: encode_context(...) followed by a constant 1 so the linear
/// policy can express a state-independent preference (the opening context is all zeros).
std::vector<double> policy_input(std::span<const TurnRecord> history, const EnvState& state,
                                 int num_actions, int horizon);
constexpr int policy_input_length(int num_actions) { return num_actions + 4; }
/// policy_input into a buffer of length policy_input_length(num_actions).
void policy_input_into(std::span<const TurnRecord> history, const EnvState& state, int num_actions,
                       int horizon, std::span<double> out);

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Returns after all finish;
/// rethrows the first exception raised by a worker.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// A child to create: the `index`-th child of `parent`.
struct ChildRequest {
  NodeId parent = kNoNode;
  std::uint32_t index = 0;
};

/// Samples exchanges with a frozen policy against the user environment.
///
/// A node's content is a pure function of its parent's state and its own RNG
/// key, so batched sampling may run on several threads and still match the
/// sequential result exactly.
class RolloutSampler {
 public:
  RolloutSampler(PolicySnapshot policy, const UserEnvironment& env, int max_depth, long step,
                 int threads = 1);

  const PolicyParams& policy() const { return *policy_; }
  const PolicySnapshot& policy_snapshot() const { return policy_; }
  const UserEnvironment& env() const { return env_; }
  long step() const { return step_; }
  int max_depth() const { return max_depth_; }

  /// Policy input at which `node`'s own action was chosen.
  std::vector<double> decision_context(const DialogueTree& tree, NodeId node) const;

  NodeSample sample_root(const RootContext& context, std::uint64_t key) const;

  /// Appends one child per request, in request order, and samples them in place.
  /// Each request's index must be the parent's next child position, and requests
  /// for the same parent must be contiguous (the parent's action distribution is
  /// computed once per run). Returns the handle of the first new node.
  NodeId add_children(DialogueTree& tree, std::span<const ChildRequest> requests, NodeRole role) const;

 private:
  StepResult sample_one(std::span<const TurnRecord> history, const EnvState& state,
                        std::span<const double> probs, std::uint64_t key) const;

  PolicySnapshot policy_;
  const UserEnvironment& env_;
  int max_depth_;
  long step_;
  int threads_;
};

/// W identical initial contexts at training step `step`.
std::vector<RootContext> identical_contexts(const UserEnvironment& env, int count, long step);

/// Samples one root per context. Root j uses RNG key child_key(tree_seed, j).
DialogueTree new_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                      std::uint64_t tree_seed);

}  // namespace atgrpo
