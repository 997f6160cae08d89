// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/dialogue_tree.hpp"

#include <algorithm>
#include <string>

#include "atgrpo/errors.hpp"

namespace atgrpo {

DialogueTree::DialogueTree(int max_depth, std::vector<RootContext> contexts,
                           std::vector<NodeSample> roots)
    : max_depth_(max_depth), root_contexts_(std::move(contexts)) {
  if (max_depth < 1) throw ConfigError("max_depth_L", "must be >= 1");
  if (roots.size() != root_contexts_.size()) {
    throw ConfigError("group_size_W", "expected one root sample per context, got " +
                                          std::to_string(roots.size()) + " samples for " +
                                          std::to_string(root_contexts_.size()) + " contexts");
  }
  nodes_.reserve(roots.size() * 8);
  for (std::size_t j = 0; j < roots.size(); ++j) {
    TreeNode n;
    n.id = static_cast<NodeId>(nodes_.size());
    n.child_index = static_cast<std::uint32_t>(j);
    n.rng_key = roots[j].rng_key;
    n.turn = std::move(roots[j].turn);
    n.state = roots[j].state;
    n.role = NodeRole::group_member;
    roots_.push_back(n.id);
    nodes_.push_back(std::move(n));
  }
}

void DialogueTree::dangling(NodeId id) {
  throw InternalError("dangling node handle " + std::to_string(id));
}

const RootContext& DialogueTree::root_context(NodeId root) const {
  const TreeNode& n = node(root);
  if (n.has_parent()) throw InternalError("node " + std::to_string(root) + " is not a root");
  return root_contexts_[n.child_index];
}

std::vector<NodeId> DialogueTree::children(NodeId id) const {
  return children(id, std::numeric_limits<std::size_t>::max());
}

std::vector<NodeId> DialogueTree::children(NodeId id, std::size_t limit) const {
  const TreeNode& n = node(id);
  std::vector<NodeId> out;
  out.reserve(std::min<std::size_t>(n.child_count, limit));
  for (NodeId c = n.first_child; c != kNoNode && out.size() < limit; c = nodes_[c].next_sibling) {
    out.push_back(c);
  }
  return out;
}

bool DialogueTree::is_leaf(NodeId id) const {
  const TreeNode& n = node(id);
  return n.turn.terminated || n.depth >= max_depth_ - 1;
}

NodeId DialogueTree::add_child(NodeId parent, NodeSample sample, NodeRole role) {
  const NodeId id = add_child_slot(parent, sample.rng_key, role);
  TreeNode& n = nodes_[id];
  n.turn = sample.turn;
  n.state = sample.state;
  return id;
}

NodeId DialogueTree::add_child_slot(NodeId parent, std::uint64_t rng_key, NodeRole role) {
  if (is_leaf(parent)) {
    throw InternalError("cannot expand leaf node " + std::to_string(parent));
  }
  const auto id = static_cast<NodeId>(nodes_.size());
  TreeNode& n = nodes_.emplace_back();
  TreeNode& p = nodes_[parent];
  n.id = id;
  n.parent = parent;
  n.depth = p.depth + 1;
  n.child_index = p.child_count;
  n.rng_key = rng_key;
  n.role = role;
  if (p.last_child == kNoNode) {
    p.first_child = id;
  } else {
    nodes_[p.last_child].next_sibling = id;
  }
  p.last_child = id;
  ++p.child_count;
  return id;
}

void DialogueTree::set_aggregated_reward(NodeId id, double value) {
  TreeNode& n = node(id);
  if (n.role == NodeRole::observation_only) {
    throw InternalError("aggregated reward on observation-only node " + std::to_string(id));
  }
  if (n.aggregated_reward) {
    throw InternalError("aggregated reward already set on node " + std::to_string(id));
  }
  n.aggregated_reward = value;
}

void DialogueTree::push_trajectory(NodeId id) {
  const TreeNode& n = node(id);
  if (!trajectory_.empty() && node(trajectory_.back()).depth >= n.depth) {
    throw InternalError("trajectory depth must strictly increase");
  }
  trajectory_.push_back(id);
}

std::vector<TurnRecord> DialogueTree::history(NodeId id) const {
  std::vector<TurnRecord> out;
  for (NodeId cur = id; cur != kNoNode; cur = node(cur).parent) out.push_back(nodes_[cur].turn);
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<NodeId> leaves_within(const DialogueTree& tree, NodeId node, int depth_limit) {
  if (!tree.contains(node)) throw InternalError("dangling node handle " + std::to_string(node));
  if (depth_limit < 0) throw DomainError("depth_limit must be >= 0");
  std::vector<NodeId> leaves;
  std::vector<NodeId> frontier{node};
  for (int level = 0; level < depth_limit && !frontier.empty(); ++level) {
    std::vector<NodeId> next;
    for (NodeId n : frontier) {
      if (tree.is_leaf(n) || tree.node(n).child_count == 0) {
        leaves.push_back(n);
        continue;
      }
      for (NodeId c = tree.node(n).first_child; c != kNoNode; c = tree.node(c).next_sibling) {
        next.push_back(c);
      }
    }
    frontier = std::move(next);
  }
  leaves.insert(leaves.end(), frontier.begin(), frontier.end());
  return leaves;
}

}  // namespace atgrpo
