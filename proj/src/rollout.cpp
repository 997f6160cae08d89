// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/rollout.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "atgrpo/errors.hpp"

namespace atgrpo {

std::vector<double> policy_input(std::span<const TurnRecord> history, const EnvState& state,
                                 int num_actions, int horizon) {
  std::vector<double> f = encode_context(history, state, num_actions, horizon);
  f.push_back(1.0);
  return f;
}

void policy_input_into(std::span<const TurnRecord> history, const EnvState& state, int num_actions,
                       int horizon, std::span<double> out) {
  if (out.size() != static_cast<std::size_t>(policy_input_length(num_actions))) {
    throw DomainError("policy_input: buffer has the wrong length");
  }
  encode_context_into(history, state, num_actions, horizon, out.first(out.size() - 1));
  out.back() = 1.0;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const std::size_t used = std::min(workers, n);
    pool.reserve(used);
    for (std::size_t t = 0; t < used; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += used) fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

RolloutSampler::RolloutSampler(PolicySnapshot policy, const UserEnvironment& env, int max_depth,
                               long step, int threads)
    : policy_(std::move(policy)), env_(env), max_depth_(max_depth), step_(step), threads_(threads) {
  if (policy_->num_actions() != env_.num_actions() ||
      policy_->feature_length() != policy_input_length(env_.num_actions())) {
    throw DomainError("policy shape (" + std::to_string(policy_->num_actions()) + "x" +
                      std::to_string(policy_->feature_length()) + ") does not fit environment " +
                      env_.name());
  }
}

std::vector<double> RolloutSampler::decision_context(const DialogueTree& tree, NodeId node) const {
  const TreeNode& n = tree.node(node);
  if (!n.has_parent()) {
    return policy_input({}, tree.root_context(node).state, env_.num_actions(), max_depth_);
  }
  const TreeNode& p = tree.node(n.parent);
  return policy_input(std::span<const TurnRecord>(&p.turn, 1), p.state, env_.num_actions(), max_depth_);
}

StepResult RolloutSampler::sample_one(std::span<const TurnRecord> history, const EnvState& state,
                                      std::span<const double> probs, std::uint64_t key) const {
  SplitMix64 rng(key);
  const ActionId action = sample_from(probs, rng.uniform());
  return env_.step(history, state, action, step_, rng);
}

NodeSample RolloutSampler::sample_root(const RootContext& context, std::uint64_t key) const {
  const std::vector<double> x = policy_input({}, context.state, env_.num_actions(), max_depth_);
  std::vector<double> probs(static_cast<std::size_t>(env_.num_actions()));
  fill_distribution(*policy_, x, probs);
  try {
    const StepResult r = sample_one({}, context.state, probs, key);
    return NodeSample{r.turn, r.state, key};
  } catch (const EnvironmentError&) {
    throw;
  } catch (const std::exception& e) {
    throw EnvironmentError(std::string("while sampling a root: ") + e.what());
  }
}

NodeId RolloutSampler::add_children(DialogueTree& tree, std::span<const ChildRequest> requests,
                                    NodeRole role) const {
  const auto first = static_cast<NodeId>(tree.size());
  // Link every child first so the arena does not move while workers fill it in.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const ChildRequest& req = requests[i];
    if (tree.node(req.parent).child_count != req.index) {
      throw InternalError("add_children: request " + std::to_string(req.index) + " for node " +
                          std::to_string(req.parent) + " is out of order");
    }
    tree.add_child_slot(req.parent, child_key(tree.node(req.parent).rng_key, req.index), role);
    if (runs.empty() || requests[runs.back().first].parent != req.parent) {
      runs.emplace_back(i, i + 1);
    } else {
      runs.back().second = i + 1;
    }
  }

  const int num_actions = env_.num_actions();
  parallel_for(runs.size(), threads_, [&](std::size_t r) {
    const auto [begin, end] = runs[r];
    const NodeId parent = requests[begin].parent;
    const TreeNode& p = tree.node(parent);
    std::vector<TurnRecord> full_history;
    std::span<const TurnRecord> history(&p.turn, 1);
    if (env_.needs_history()) {
      full_history = tree.history(parent);
      history = full_history;
    }
    thread_local std::vector<double> x, probs;
    x.resize(static_cast<std::size_t>(policy_input_length(num_actions)));
    probs.resize(static_cast<std::size_t>(num_actions));
    policy_input_into(history, p.state, num_actions, max_depth_, x);
    fill_distribution(*policy_, x, probs);
    for (std::size_t i = begin; i < end; ++i) {
      TreeNode& child = tree.node(first + static_cast<NodeId>(i));
      try {
        const StepResult s = sample_one(history, p.state, probs, child.rng_key);
        child.turn = s.turn;
        child.state = s.state;
      } catch (const std::exception& e) {
        throw EnvironmentError("while expanding node " + std::to_string(parent) + " (depth " +
                               std::to_string(p.depth) + ", child " +
                               std::to_string(requests[i].index) + "): " + e.what());
      }
    }
  });
  return first;
}

std::vector<RootContext> identical_contexts(const UserEnvironment& env, int count, long step) {
  return std::vector<RootContext>(static_cast<std::size_t>(count), RootContext{env.initial_state(step)});
}

DialogueTree new_tree(std::vector<RootContext> contexts, const RolloutSampler& sampler,
                      std::uint64_t tree_seed) {
  std::vector<NodeSample> roots;
  roots.reserve(contexts.size());
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    roots.push_back(sampler.sample_root(contexts[j], child_key(tree_seed, j)));
  }
  return DialogueTree(sampler.max_depth(), std::move(contexts), std::move(roots));
}

}  // namespace atgrpo
