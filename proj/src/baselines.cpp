// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/baselines.hpp"

#include <string>

#include "atgrpo/budget.hpp"
#include "atgrpo/errors.hpp"

namespace atgrpo {
StepMetrics chain_grpo_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                            const PolicyParams& reference, long step, const TrainOptions& options) {
  hparams.validate();
  const PolicySnapshot old = snapshot(live);
  const RolloutSampler sampler(old, env, hparams.max_depth, step, options.threads);
  const std::uint64_t seed = tree_seed_for(hparams.rng_seed, step);
  SplitMix64 select_rng(mix64(seed ^ 0x5e1ec7ULL));
  const TreeBuild build = build_tree(identical_contexts(env, hparams.group_size, step), sampler, hparams,
                                     seed, select_rng, zero_schedule());
  return update_from_tree("chain_grpo", live, *old, reference, build, sampler, hparams, options);
}

std::vector<double> bottom_up_values(const DialogueTree& tree, double omega) {
  const std::size_t n = tree.size();
  std::vector<double> leaf_sum(n, 0.0);
  std::vector<std::uint64_t> leaf_count(n, 0);
  std::vector<double> value(n, 0.0);
  // Children always have larger handles than their parent.
  for (std::size_t k = n; k-- > 0;) {
    const auto id = static_cast<NodeId>(k);
    const TreeNode& node = tree.node(id);
    if (node.child_count == 0) {
      leaf_sum[k] = node.turn.reward;
      leaf_count[k] = 1;
      value[k] = node.turn.reward;
    } else {
      value[k] = omega * node.turn.reward +
                 (1.0 - omega) * leaf_sum[k] / static_cast<double>(leaf_count[k]);
    }
    if (node.has_parent()) {
      leaf_sum[node.parent] += leaf_sum[k];
      leaf_count[node.parent] += leaf_count[k];
    }
  }
  return value;
}

TreeBuild build_full_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                          const Hyperparams& hparams, std::uint64_t tree_seed) {
  if (hparams.max_depth > kFullTreeMaxDepth) {
    throw DomainError("full tree expansion refused: L = " + std::to_string(hparams.max_depth) +
                      " exceeds " + std::to_string(kFullTreeMaxDepth) + " and would need up to " +
                      std::to_string(full_tree_budget(hparams.group_size, hparams.max_depth)) +
                      " environment interactions per tree");
  }
  TreeBuild out{new_tree(std::move(contexts), sampler, tree_seed), {}};
  DialogueTree& tree = out.tree;
  expand_group(tree, tree.roots(), hparams.group_size, hparams.max_depth - 1, sampler);

  const std::vector<double> values = bottom_up_values(tree, hparams.omega);
  for (NodeId id = 0; id < tree.size(); ++id) {
    tree.set_role(id, NodeRole::group_member);
    tree.set_aggregated_reward(id, values[id]);
  }

  Group roots;
  roots.depth = 0;
  roots.members = tree.roots();
  compute_group_statistics(tree, roots);
  out.groups.push_back(std::move(roots));
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.node(id).child_count == 0) continue;
    Group g;
    g.depth = tree.node(id).depth + 1;
    g.members = tree.children(id);
    compute_group_statistics(tree, g);
    out.groups.push_back(std::move(g));
  }
  return out;
}

StepMetrics full_treerpo_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                              const PolicyParams& reference, long step, const TrainOptions& options) {
  hparams.validate();
  const PolicySnapshot old = snapshot(live);
  const RolloutSampler sampler(old, env, hparams.max_depth, step, options.threads);
  const std::uint64_t seed = tree_seed_for(hparams.rng_seed, step);
  const TreeBuild build =
      build_full_tree(identical_contexts(env, hparams.group_size, step), sampler, hparams, seed);
  return update_from_tree("full_treerpo", live, *old, reference, build, sampler, hparams, options);
}

}  // namespace atgrpo
