// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "atgrpo/arena_allocator.hpp"
#include "atgrpo/types.hpp"

namespace atgrpo {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class NodeRole : std::uint8_t { group_member, observation_only, trajectory_selected };

/// One sampled exchange in the rollout tree.
///
/// Children form an intrusive singly-linked list (`first_child` / `next_sibling`)
/// so that appending never allocates; creation order is preserved.
struct TreeNode {
  NodeId id = kNoNode;
  int depth = 0;
  NodeId parent = kNoNode;
  NodeId first_child = kNoNode;
  NodeId last_child = kNoNode;
  NodeId next_sibling = kNoNode;
  std::uint32_t child_count = 0;
  std::uint32_t child_index = 0;  // position under the parent (or among the roots)
  std::uint64_t rng_key = 0;
  TurnRecord turn;
  EnvState state;  // environment state after this exchange
  std::optional<double> aggregated_reward;
  NodeRole role = NodeRole::observation_only;

  bool has_parent() const { return parent != kNoNode; }
};

/// Initial dialogue context of one root.
struct RootContext {
  EnvState state;
};

/// A freshly sampled exchange, ready to be stored in the tree.
struct NodeSample {
  TurnRecord turn;
  EnvState state;
  std::uint64_t rng_key = 0;
};

/// Arena-backed rollout tree with integer handles.
///
/// Every stored node corresponds to exactly one environment interaction, so
/// `expansion_counter() == size()` always holds. The counters below split that
/// total by origin so the observation-subtree budget can be audited on its own.
class DialogueTree {
 public:
  /// Builds the W roots. `contexts[j]` is the context root j was sampled from.
  DialogueTree(int max_depth, std::vector<RootContext> contexts, std::vector<NodeSample> roots);

  int max_depth() const { return max_depth_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t expansion_counter() const { return nodes_.size(); }

  const TreeNode& node(NodeId id) const {
    if (id >= nodes_.size()) dangling(id);
    return nodes_[id];
  }
  TreeNode& node(NodeId id) {
    if (id >= nodes_.size()) dangling(id);
    return nodes_[id];
  }
  bool contains(NodeId id) const { return id < nodes_.size(); }

  const std::vector<NodeId>& roots() const { return roots_; }
  const RootContext& root_context(NodeId root) const;
  std::vector<NodeId> children(NodeId id) const;
  /// First `limit` children in creation order.
  std::vector<NodeId> children(NodeId id, std::size_t limit) const;

  /// Leaf iff the user terminated or the node sits at depth L - 1.
  bool is_leaf(NodeId id) const;

  NodeId add_child(NodeId parent, NodeSample sample, NodeRole role);
  /// Links an empty child whose turn and state are filled in later.
  NodeId add_child_slot(NodeId parent, std::uint64_t rng_key, NodeRole role);
  /// Capacity hint for the node arena.
  void reserve(std::size_t nodes) { nodes_.reserve(nodes); }

  /// Sets r' once, for group members only. A second call is an InternalError.
  void set_aggregated_reward(NodeId id, double value);
  void set_role(NodeId id, NodeRole role) { node(id).role = role; }

  const std::vector<NodeId>& trajectory() const { return trajectory_; }
  void push_trajectory(NodeId id);

  /// Turns on the path from the root down to `id`, inclusive.
  std::vector<TurnRecord> history(NodeId id) const;

  // Interaction accounting. roots + observation_created + population_created == size().
  std::uint64_t root_count() const { return roots_.size(); }
  std::uint64_t observation_created() const { return observation_created_; }
  std::uint64_t observation_reused() const { return observation_reused_; }
  std::uint64_t population_created() const { return population_created_; }
  void count_observation_created(std::uint64_t n) { observation_created_ += n; }
  void count_observation_reused(std::uint64_t n) { observation_reused_ += n; }
  void count_population_created(std::uint64_t n) { population_created_ += n; }

 private:
  [[noreturn]] static void dangling(NodeId id);

  int max_depth_;
  std::vector<TreeNode, ArenaAllocator<TreeNode>> nodes_;
  std::vector<NodeId> roots_;
  std::vector<RootContext> root_contexts_;
  std::vector<NodeId> trajectory_;
  std::uint64_t observation_created_ = 0;
  std::uint64_t observation_reused_ = 0;
  std::uint64_t population_created_ = 0;
};

/// Leaves of the subtree below `node` explored down to `depth_limit` levels:
/// nodes at exactly that relative depth plus any leaf (terminated or at the
/// depth cap) met earlier. `depth_limit == 0` yields `{node}`.
std::vector<NodeId> leaves_within(const DialogueTree& tree, NodeId node, int depth_limit);

/// The W siblings over which advantages are normalized.
struct Group {
  int depth = 0;
  std::vector<NodeId> members;
  double mean_mu = 0.0;
  double std_sigma = 0.0;
  std::vector<double> advantages;
};

}  // namespace atgrpo
