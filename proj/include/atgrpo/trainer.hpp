// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "atgrpo/dialogue_tree.hpp"
#include "atgrpo/metrics.hpp"
#include "atgrpo/policy.hpp"
#include "atgrpo/rollout.hpp"
#include "atgrpo/types.hpp"
#include "atgrpo/user_env.hpp"

namespace atgrpo {

/// Observation length round(gamma * ln(L - i + 1)) for the turn numbered i in [1, L].
/// Nodes at tree depth d use i = d + 1. Rounding is to nearest, ties away from zero.
int observation_length(int i, int max_depth, double gamma);

/// Maps a group's tree depth to the number of levels observed below each member.
using ObservationSchedule = std::function<int(int depth)>;
ObservationSchedule adaptive_schedule(int max_depth, double gamma);
/// No look-ahead: aggregated reward collapses to the immediate reward (chain GRPO).
ObservationSchedule zero_schedule();

/// Expands `width` children per non-leaf node for `depth` levels below `node`
/// (breadth first) and returns the leaves of the expanded subtree. Existing
/// children are reused before new ones are sampled; created nodes are
/// observation-only.
std::vector<NodeId> expand_subtree(DialogueTree& tree, NodeId node, int width, int depth,
                                   const RolloutSampler& sampler);

/// expand_subtree for every member of a group, level-synchronously. Node
/// creation order is deterministic; sampling may run on several threads.
std::vector<std::vector<NodeId>> expand_group(DialogueTree& tree, std::span<const NodeId> members,
                                              int width, int depth, const RolloutSampler& sampler);

/// r' = omega * r + (1 - omega) * mean(leaf rewards), dividing by the actual leaf
/// count. Stores r' on the node and returns it.
double aggregate_reward(DialogueTree& tree, NodeId node, std::span<const NodeId> leaves, double omega);

inline constexpr double kSigmaGuard = 1e-12;

/// (x - mean) / population std; all zeros when std < kSigmaGuard.
std::vector<double> group_advantages(std::span<const double> aggregated);

/// Fills mean, std and advantages of `group` from its members' aggregated rewards.
void compute_group_statistics(const DialogueTree& tree, Group& group);

/// Uniform choice among non-leaf members, marked trajectory_selected and
/// appended to the tree trajectory. Empty when every member is a leaf.
std::optional<NodeId> select_trajectory_node(DialogueTree& tree, const Group& group, SplitMix64& rng);

/// Tops `node` up to `group_size` children, reusing existing ones, and returns
/// the first `group_size` of them as the next (unscored) group. Children beyond
/// that (possible when w > W) stay observation-only.
Group populate_group(DialogueTree& tree, NodeId node, int group_size, const RolloutSampler& sampler);

struct TreeBuild {
  DialogueTree tree;
  std::vector<Group> groups;
};

/// Layered construction: score the current group through its observation
/// subtrees, normalize, then extend one random non-leaf member to a full group
/// at the next depth. Stops after depth L - 1 or when a group is all leaves.
TreeBuild build_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                     const Hyperparams& hparams, std::uint64_t tree_seed, SplitMix64& select_rng,
                     const ObservationSchedule& schedule);

/// Everything the objective needs about one group, detached from the tree.
struct GroupBatch {
  std::vector<NodeId> nodes;
  std::vector<std::vector<double>> contexts;
  std::vector<ActionId> actions;
  std::vector<double> advantages;
};

GroupBatch make_batch(const DialogueTree& tree, const Group& group, const RolloutSampler& sampler);

/// J(theta) = mean_j [ min(rho_j A_j, clip(rho_j, 1-eps, 1+eps) A_j) - beta KL_j ],
/// rho_j = pi_theta(a_j|x_j) / pi_old(a_j|x_j), KL_j = KL(pi_theta || pi_ref) at x_j.
double group_objective(const GroupBatch& batch, const PolicyParams& live, const PolicyParams& old,
                       const PolicyParams& ref, double epsilon, double beta);

/// Gradient of group_objective. Inside the min, the gradient follows the selected
/// branch; the unclipped branch wins ties, and a clipped constant contributes zero.
Eigen::MatrixXd group_objective_grad(const GroupBatch& batch, const PolicyParams& live,
                                     const PolicyParams& old, const PolicyParams& ref,
                                     double epsilon, double beta);

enum class GroupWeighting {
  equal,             // sum of per-group objectives
  mean_over_groups,  // divided by the number of groups
};

struct TrainOptions {
  int threads = 1;
  int eval_interval = 1;
  int eval_episodes = 1;
  GroupWeighting weighting = GroupWeighting::equal;
};

struct UpdateSummary {
  double kl = 0.0;  // mean over all group members
  bool kl_clamped = false;
  double grad_norm = 0.0;
  double update_norm = 0.0;
  double train_reward = 0.0;
};

/// Accumulates the gradients of all groups and takes one ascent step on `live`.
UpdateSummary apply_group_update(PolicyParams& live, const PolicyParams& old, const PolicyParams& ref,
                                 std::span<const GroupBatch> batches, const DialogueTree& tree,
                                 const Hyperparams& hparams, GroupWeighting weighting);

/// Turns every group of `build` into a batch, applies one update to `live` and
/// reports the step.
StepMetrics update_from_tree(const char* method, PolicyParams& live, const PolicyParams& old,
                             const PolicyParams& reference, const TreeBuild& build,
                             const RolloutSampler& sampler, const Hyperparams& hparams,
                             const TrainOptions& options);

/// Seed of the tree built at `step` for a run seeded with `run_seed`.
std::uint64_t tree_seed_for(std::uint64_t run_seed, long step);

/// One AT-GRPO step: snapshot pi_old, build one tree, update once.
StepMetrics train_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                       const PolicyParams& reference, long step, const TrainOptions& options = {});

/// Per-episode rewards of greedy (argmax) dialogues against the environment.
struct Episode {
  std::vector<double> rewards;
  ActionId first_action = -1;
};

std::vector<Episode> greedy_episodes(const PolicyParams& policy, const UserEnvironment& env,
                                     int max_depth, long step, int count, std::uint64_t seed);

/// Signature shared by AT-GRPO and the baselines.
using StepFunction = std::function<StepMetrics(PolicyParams& live, const PolicyParams& reference,
                                               long step)>;

struct RunReport {
  std::vector<StepMetrics> steps;
  PolicyParams final_policy;
};

/// Sequential training for `num_steps` steps; the reference policy is the
/// initial one. Evaluation runs every `eval_interval` steps and on the last step.
/// `on_step` (optional) sees each record as soon as it is complete.
RunReport train_run(PolicyParams policy, const UserEnvironment& env, const Hyperparams& hparams,
                    long num_steps, const TrainOptions& options, const StepFunction& step_fn,
                    const std::function<void(const StepMetrics&)>& on_step = {});

/// train_run with the AT-GRPO step.
RunReport train_run(PolicyParams policy, const UserEnvironment& env, const Hyperparams& hparams,
                    long num_steps, const TrainOptions& options = {});

/// Zero-initialized policy shaped for `env`.
PolicyParams initial_policy(const UserEnvironment& env);

}  // namespace atgrpo
