// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "atgrpo/budget.hpp"
#include "atgrpo/errors.hpp"

namespace atgrpo {

int observation_length(int i, int max_depth, double gamma) {
  if (i < 1 || i > max_depth) {
    throw DomainError("observation_length: i = " + std::to_string(i) + " outside [1, " +
                      std::to_string(max_depth) + "]");
  }
  // std::lround rounds half away from zero.
  return static_cast<int>(std::lround(gamma * std::log(static_cast<double>(max_depth - i + 1))));
}

ObservationSchedule adaptive_schedule(int max_depth, double gamma) {
  return [max_depth, gamma](int depth) { return observation_length(depth + 1, max_depth, gamma); };
}

ObservationSchedule zero_schedule() {
  return [](int) { return 0; };
}

std::vector<NodeId> expand_subtree(DialogueTree& tree, NodeId node, int width, int depth,
                                   const RolloutSampler& sampler) {
  const NodeId members[] = {node};
  return std::move(expand_group(tree, members, width, depth, sampler).front());
}

std::vector<std::vector<NodeId>> expand_group(DialogueTree& tree, std::span<const NodeId> members,
                                              int width, int depth, const RolloutSampler& sampler) {
  if (depth < 0) throw DomainError("expand: depth must be >= 0");
  if (width < 1) throw DomainError("expand: width must be >= 1");
  const std::size_t k = members.size();
  std::vector<std::vector<NodeId>> leaves(k);
  std::vector<std::vector<NodeId>> frontier(k);
  for (std::size_t m = 0; m < k; ++m) frontier[m] = {members[m]};

  std::vector<ChildRequest> requests;
  for (int level = 0; level < depth; ++level) {
    requests.clear();
    std::uint64_t reused = 0;
    for (std::size_t m = 0; m < k; ++m) {
      for (NodeId n : frontier[m]) {
        if (tree.is_leaf(n)) continue;
        const auto existing = std::min<std::uint32_t>(tree.node(n).child_count,
                                                      static_cast<std::uint32_t>(width));
        reused += existing;
        for (auto c = existing; c < static_cast<std::uint32_t>(width); ++c) requests.push_back({n, c});
      }
    }
    sampler.add_children(tree, requests, NodeRole::observation_only);
    tree.count_observation_created(requests.size());
    tree.count_observation_reused(reused);

    bool any = false;
    for (std::size_t m = 0; m < k; ++m) {
      std::vector<NodeId> next;
      for (NodeId n : frontier[m]) {
        if (tree.is_leaf(n)) {
          leaves[m].push_back(n);
          continue;
        }
        NodeId c = tree.node(n).first_child;
        for (int taken = 0; taken < width && c != kNoNode; ++taken, c = tree.node(c).next_sibling) {
          next.push_back(c);
        }
      }
      any = any || !next.empty();
      frontier[m] = std::move(next);
    }
    if (!any) break;
  }
  for (std::size_t m = 0; m < k; ++m) {
    leaves[m].insert(leaves[m].end(), frontier[m].begin(), frontier[m].end());
  }
  return leaves;
}

double aggregate_reward(DialogueTree& tree, NodeId node, std::span<const NodeId> leaves, double omega) {
  if (leaves.empty()) {
    throw InternalError("aggregate_reward: node " + std::to_string(node) + " has no leaves");
  }
  double sum = 0.0;
  for (NodeId l : leaves) sum += tree.node(l).turn.reward;
  const double value =
      omega * tree.node(node).turn.reward + (1.0 - omega) * sum / static_cast<double>(leaves.size());
  tree.set_aggregated_reward(node, value);
  return value;
}

std::vector<double> group_advantages(std::span<const double> aggregated) {
  const auto n = static_cast<double>(aggregated.size());
  std::vector<double> out(aggregated.size(), 0.0);
  if (aggregated.empty()) return out;
  const double mu = std::accumulate(aggregated.begin(), aggregated.end(), 0.0) / n;
  double var = 0.0;
  for (double x : aggregated) var += (x - mu) * (x - mu);
  const double sigma = std::sqrt(var / n);
  if (sigma < kSigmaGuard) return out;
  for (std::size_t j = 0; j < aggregated.size(); ++j) out[j] = (aggregated[j] - mu) / sigma;
  return out;
}

void compute_group_statistics(const DialogueTree& tree, Group& group) {
  std::vector<double> values;
  values.reserve(group.members.size());
  for (NodeId m : group.members) {
    const auto& r = tree.node(m).aggregated_reward;
    if (!r) throw InternalError("group member " + std::to_string(m) + " has no aggregated reward");
    values.push_back(*r);
  }
  const auto n = static_cast<double>(values.size());
  group.mean_mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double x : values) var += (x - group.mean_mu) * (x - group.mean_mu);
  group.std_sigma = std::sqrt(var / n);
  group.advantages = group_advantages(values);
}

std::optional<NodeId> select_trajectory_node(DialogueTree& tree, const Group& group, SplitMix64& rng) {
  std::vector<NodeId> non_leaf;
  for (NodeId m : group.members) {
    if (!tree.is_leaf(m)) non_leaf.push_back(m);
  }
  if (non_leaf.empty()) return std::nullopt;
  const NodeId chosen = non_leaf[non_leaf.size() == 1 ? 0 : rng.below(non_leaf.size())];
  tree.set_role(chosen, NodeRole::trajectory_selected);
  tree.push_trajectory(chosen);
  return chosen;
}

Group populate_group(DialogueTree& tree, NodeId node, int group_size, const RolloutSampler& sampler) {
  if (tree.is_leaf(node)) {
    throw InternalError("populate_group: node " + std::to_string(node) + " is a leaf");
  }
  const std::uint32_t existing = tree.node(node).child_count;
  std::vector<ChildRequest> requests;
  for (auto c = existing; c < static_cast<std::uint32_t>(group_size); ++c) requests.push_back({node, c});
  sampler.add_children(tree, requests, NodeRole::group_member);
  tree.count_population_created(requests.size());

  Group g;
  g.depth = tree.node(node).depth + 1;
  g.members = tree.children(node, static_cast<std::size_t>(group_size));
  for (NodeId m : g.members) tree.set_role(m, NodeRole::group_member);
  return g;
}

TreeBuild build_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                     const Hyperparams& hparams, std::uint64_t tree_seed, SplitMix64& select_rng,
                     const ObservationSchedule& schedule) {
  if (static_cast<int>(contexts.size()) != hparams.group_size) {
    throw ConfigError("group_size_W", "expected " + std::to_string(hparams.group_size) +
                                          " root contexts, got " + std::to_string(contexts.size()));
  }
  TreeBuild out{new_tree(std::move(contexts), sampler, tree_seed), {}};
  DialogueTree& tree = out.tree;
  const int L = hparams.max_depth;

  // Size of the tree when nobody terminates, capped.
  double expected = hparams.group_size;
  for (int depth = 0; depth < L; ++depth) {
    const int l = std::min(schedule(depth), L - 1 - depth);
    double layer = 1.0, sum = 0.0;
    for (int t = 1; t <= l; ++t) sum += (layer *= hparams.adaptive_width);
    expected += hparams.group_size * (sum + 1.0);
  }
  tree.reserve(static_cast<std::size_t>(std::min(expected, double{1 << 24})));

  Group current;
  current.depth = 0;
  current.members = tree.roots();
  for (int depth = 0; depth < L; ++depth) {
    // Levels below depth L - 1 do not exist; clamp the look-ahead to what remains.
    const int l = std::min(schedule(depth), L - 1 - depth);
    const auto leaves = expand_group(tree, current.members, hparams.adaptive_width, l, sampler);
    for (std::size_t j = 0; j < current.members.size(); ++j) {
      aggregate_reward(tree, current.members[j], leaves[j], hparams.omega);
    }
    compute_group_statistics(tree, current);
    out.groups.push_back(current);

    const auto selected = select_trajectory_node(tree, current, select_rng);
    if (!selected) break;
    current = populate_group(tree, *selected, hparams.group_size, sampler);
  }
  return out;
}

GroupBatch make_batch(const DialogueTree& tree, const Group& group, const RolloutSampler& sampler) {
  if (group.advantages.size() != group.members.size()) {
    throw InternalError("make_batch: group advantages not computed");
  }
  GroupBatch b;
  b.nodes = group.members;
  b.advantages = group.advantages;
  for (NodeId m : group.members) {
    b.contexts.push_back(sampler.decision_context(tree, m));
    b.actions.push_back(tree.node(m).turn.agent_action);
  }
  return b;
}

namespace {

struct MemberTerms {
  double ratio = 1.0;
  bool unclipped_selected = true;
  double surrogate = 0.0;
};

MemberTerms member_terms(const GroupBatch& batch, std::size_t j, const PolicyParams& live,
                         const PolicyParams& old, double epsilon) {
  const double log_ratio = log_prob(live, batch.contexts[j], batch.actions[j]) -
                           log_prob(old, batch.contexts[j], batch.actions[j]);
  MemberTerms t;
  t.ratio = std::exp(log_ratio);
  if (!std::isfinite(t.ratio)) {
    throw DomainError("non-finite policy ratio at node " + std::to_string(batch.nodes[j]));
  }
  const double a = batch.advantages[j];
  const double unclipped = t.ratio * a;
  const double clipped = std::clamp(t.ratio, 1.0 - epsilon, 1.0 + epsilon) * a;
  t.unclipped_selected = unclipped <= clipped;
  t.surrogate = std::min(unclipped, clipped);
  return t;
}

void check_batch(const GroupBatch& batch) {
  const auto n = batch.nodes.size();
  if (n == 0 || batch.contexts.size() != n || batch.actions.size() != n || batch.advantages.size() != n) {
    throw InternalError("malformed group batch");
  }
}

}  // namespace

double group_objective(const GroupBatch& batch, const PolicyParams& live, const PolicyParams& old,
                       const PolicyParams& ref, double epsilon, double beta) {
  check_batch(batch);
  double total = 0.0;
  for (std::size_t j = 0; j < batch.nodes.size(); ++j) {
    total += member_terms(batch, j, live, old, epsilon).surrogate;
    if (beta != 0.0) total -= beta * kl_divergence(live, ref, batch.contexts[j]).value;
  }
  return total / static_cast<double>(batch.nodes.size());
}

Eigen::MatrixXd group_objective_grad(const GroupBatch& batch, const PolicyParams& live,
                                     const PolicyParams& old, const PolicyParams& ref,
                                     double epsilon, double beta) {
  check_batch(batch);
  if (live.weights.rows() != old.weights.rows() || live.weights.cols() != old.weights.cols() ||
      live.weights.rows() != ref.weights.rows() || live.weights.cols() != ref.weights.cols()) {
    throw DomainError("group_objective_grad: parameter shapes differ");
  }
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(live.weights.rows(), live.weights.cols());
  for (std::size_t j = 0; j < batch.nodes.size(); ++j) {
    const MemberTerms t = member_terms(batch, j, live, old, epsilon);
    // d(rho A)/dW = A rho dlog pi/dW
    if (t.unclipped_selected && batch.advantages[j] != 0.0) {
      grad += (batch.advantages[j] * t.ratio) * log_prob_grad(live, batch.contexts[j], batch.actions[j]);
    }
    if (beta != 0.0) grad -= beta * kl_grad(live, ref, batch.contexts[j]);
  }
  return grad / static_cast<double>(batch.nodes.size());
}

UpdateSummary apply_group_update(PolicyParams& live, const PolicyParams& old, const PolicyParams& ref,
                                 std::span<const GroupBatch> batches, const DialogueTree& tree,
                                 const Hyperparams& hparams, GroupWeighting weighting) {
  UpdateSummary s;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(live.weights.rows(), live.weights.cols());
  std::size_t members = 0;
  for (const GroupBatch& b : batches) {
    grad += group_objective_grad(b, live, old, ref, hparams.clip_epsilon, hparams.kl_beta);
    for (std::size_t j = 0; j < b.nodes.size(); ++j) {
      const KlResult kl = kl_divergence(live, ref, b.contexts[j]);
      s.kl += kl.value;
      s.kl_clamped = s.kl_clamped || kl.clamped;
      s.train_reward += tree.node(b.nodes[j]).turn.reward;
      ++members;
    }
  }
  if (weighting == GroupWeighting::mean_over_groups && !batches.empty()) {
    grad /= static_cast<double>(batches.size());
  }
  if (members > 0) {
    s.kl /= static_cast<double>(members);
    s.train_reward /= static_cast<double>(members);
  }
  s.grad_norm = grad.norm();
  s.update_norm = hparams.learning_rate * s.grad_norm;
  apply_gradient(live, grad, hparams.learning_rate);
  return s;
}

std::uint64_t tree_seed_for(std::uint64_t run_seed, long step) {
  return mix64(mix64(run_seed) ^ static_cast<std::uint64_t>(step));
}

StepMetrics update_from_tree(const char* method, PolicyParams& live, const PolicyParams& old,
                             const PolicyParams& reference, const TreeBuild& build,
                             const RolloutSampler& sampler, const Hyperparams& hparams,
                             const TrainOptions& options) {
  std::vector<GroupBatch> batches;
  batches.reserve(build.groups.size());
  for (const Group& g : build.groups) batches.push_back(make_batch(build.tree, g, sampler));
  const UpdateSummary u =
      apply_group_update(live, old, reference, batches, build.tree, hparams, options.weighting);

  const DialogueTree& tree = build.tree;
  StepMetrics m;
  m.method = method;
  m.step = sampler.step();
  m.alpha = alpha_schedule(sampler.step(), sampler.env().threshold_lambda());
  m.budget = tree.expansion_counter();
  m.observation_nodes = tree.observation_created();
  m.observation_reused = tree.observation_reused();
  m.population_nodes = tree.root_count() + tree.population_created();
  m.groups = static_cast<int>(build.groups.size());
  m.train_reward = u.train_reward;
  m.kl = u.kl;
  m.kl_clamped = u.kl_clamped;
  m.grad_norm = u.grad_norm;
  m.update_norm = u.update_norm;
  return m;
}

StepMetrics train_step(PolicyParams& live, const UserEnvironment& env, const Hyperparams& hparams,
                       const PolicyParams& reference, long step, const TrainOptions& options) {
  hparams.validate();
  const PolicySnapshot old = snapshot(live);
  const RolloutSampler sampler(old, env, hparams.max_depth, step, options.threads);
  const std::uint64_t seed = tree_seed_for(hparams.rng_seed, step);
  SplitMix64 select_rng(mix64(seed ^ 0x5e1ec7ULL));
  const TreeBuild build = build_tree(identical_contexts(env, hparams.group_size, step), sampler, hparams,
                                     seed, select_rng, adaptive_schedule(hparams.max_depth, hparams.gamma));
  return update_from_tree("atgrpo", live, *old, reference, build, sampler, hparams, options);
}

std::vector<Episode> greedy_episodes(const PolicyParams& policy, const UserEnvironment& env,
                                     int max_depth, long step, int count, std::uint64_t seed) {
  std::vector<Episode> out;
  for (int e = 0; e < count; ++e) {
    SplitMix64 rng(child_key(seed, static_cast<std::uint64_t>(e)));
    Episode ep;
    EnvState state = env.initial_state(step);
    std::vector<TurnRecord> history;
    while (static_cast<int>(ep.rewards.size()) < max_depth && !state.terminated) {
      const auto x = policy_input(history, state, env.num_actions(), max_depth);
      const ActionId a = argmax_action(policy, x);
      if (ep.first_action < 0) ep.first_action = a;
      StepResult r = env.step(history, state, a, step, rng);
      ep.rewards.push_back(r.turn.reward);
      history.push_back(std::move(r.turn));
      state = r.state;
    }
    out.push_back(std::move(ep));
  }
  return out;
}

PolicyParams initial_policy(const UserEnvironment& env) {
  return PolicyParams(env.num_actions(), policy_input_length(env.num_actions()));
}

RunReport train_run(PolicyParams policy, const UserEnvironment& env, const Hyperparams& hparams,
                    long num_steps, const TrainOptions& options, const StepFunction& step_fn,
                    const std::function<void(const StepMetrics&)>& on_step) {
  if (num_steps < 1) throw ConfigError("steps", "must be >= 1");
  if (options.eval_interval < 1) throw ConfigError("eval_interval", "must be >= 1");
  if (options.eval_episodes < 1) throw ConfigError("eval_episodes", "must be >= 1");
  hparams.validate();
  const PolicyParams reference = policy;
  RunReport report;
  for (long step = 0; step < num_steps; ++step) {
    StepMetrics m = step_fn(policy, reference, step);
    if (step % options.eval_interval == 0 || step == num_steps - 1) {
      const auto episodes = greedy_episodes(policy, env, hparams.max_depth, step, options.eval_episodes,
                                            mix64(hparams.rng_seed ^ 0xe7a1ULL) + static_cast<std::uint64_t>(step));
      std::vector<std::vector<double>> rewards;
      for (const auto& ep : episodes) rewards.push_back(ep.rewards);
      const DialogueMetrics dm = avg_metrics(rewards);
      m.avg_reward = dm.avg_r;
      m.avg_length = dm.avg_l;
      m.greedy_first_action = episodes.front().first_action;
    }
    if (on_step) on_step(m);
    report.steps.push_back(std::move(m));
  }
  report.final_policy = std::move(policy);
  return report;
}

RunReport train_run(PolicyParams policy, const UserEnvironment& env, const Hyperparams& hparams,
                    long num_steps, const TrainOptions& options) {
  return train_run(std::move(policy), env, hparams, num_steps, options,
                   [&](PolicyParams& live, const PolicyParams& ref, long step) {
                     return train_step(live, env, hparams, ref, step, options);
                   });
}

}  // namespace atgrpo
