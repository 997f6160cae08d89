// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "atgrpo/trainer.hpp"

namespace atgrpo {

/// Deepest tree the full-expansion baseline accepts.
inline constexpr int kFullTreeMaxDepth = 5;

/// Chain-rollout GRPO: per turn W candidates scored by immediate reward only,
/// one random non-leaf candidate continues the chain.
StepMetrics chain_grpo_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                            const PolicyParams& reference, long step, const TrainOptions& options = {});

/// Complete W-ary tree to depth L. Node values come from bottom-up aggregation
/// and every sibling set is a group.
TreeBuild build_full_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                          const Hyperparams& hparams, std::uint64_t tree_seed);

/// Bottom-up values for every node: leaves keep their own reward; an internal
/// node gets omega * r + (1 - omega) * (mean reward of the leaves below it).
/// The leaf mean is carried upward as (sum, count) so it weights each leaf once.
std::vector<double> bottom_up_values(const DialogueTree& tree, double omega);

/// Full-expansion tree baseline. Refuses L > kFullTreeMaxDepth with the budget it would need.
StepMetrics full_treerpo_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                              const PolicyParams& reference, long step, const TrainOptions& options = {});

}  // namespace atgrpo
