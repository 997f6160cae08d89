// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "atgrpo/errors.hpp"
#include "atgrpo/policy.hpp"
#include "atgrpo/rollout.hpp"
#include "atgrpo/trainer.hpp"
#include "support.hpp"

using namespace atgrpo;
using testing_support::sample;
using testing_support::small_tree;

TEST_CASE("new tree holds one root per context") {
  const TopicUser env(EnvConfig{}, 0.02);
  const RolloutSampler sampler(snapshot(initial_policy(env)), env, 10, 0);
  const DialogueTree tree = new_tree(identical_contexts(env, 8, 0), sampler, 42);
  CHECK(tree.roots().size() == 8);
  CHECK(tree.expansion_counter() == 8);
  CHECK(tree.size() == 8);
  for (NodeId r : tree.roots()) {
    CHECK(tree.node(r).depth == 0);
    CHECK(tree.node(r).role == NodeRole::group_member);
    CHECK_FALSE(tree.node(r).has_parent());
  }
}

TEST_CASE("two identical contexts give distinct handles") {
  const DialogueTree tree = small_tree(4, 2);
  CHECK(tree.roots()[0] != tree.roots()[1]);
}

TEST_CASE("root count must match the contexts") {
  std::vector<RootContext> contexts(3);
  std::vector<NodeSample> roots{sample(0, 0.1), sample(0, 0.1)};
  CHECK_THROWS_AS(DialogueTree(4, contexts, roots), ConfigError);
}

TEST_CASE("leaf predicate is terminated or at the depth cap") {
  DialogueTree tree = small_tree(3, 1);
  const NodeId r = tree.roots()[0];
  CHECK_FALSE(tree.is_leaf(r));
  const NodeId a = tree.add_child(r, sample(0, 1.0, true), NodeRole::observation_only);
  const NodeId b = tree.add_child(r, sample(1, 0.2), NodeRole::observation_only);
  CHECK(tree.is_leaf(a));
  CHECK_FALSE(tree.is_leaf(b));
  const NodeId c = tree.add_child(b, sample(1, 0.2), NodeRole::observation_only);
  CHECK(tree.node(c).depth == 2);
  CHECK(tree.is_leaf(c));
  CHECK_THROWS_AS(tree.add_child(c, sample(0, 0.1), NodeRole::observation_only), InternalError);
  CHECK_THROWS_AS(tree.add_child(a, sample(0, 0.1), NodeRole::observation_only), InternalError);
}

TEST_CASE("children keep creation order and link back to the parent") {
  DialogueTree tree = small_tree(4, 1);
  const NodeId r = tree.roots()[0];
  std::vector<NodeId> made;
  for (int k = 0; k < 5; ++k) made.push_back(tree.add_child(r, sample(k % 2, 0.1), NodeRole::observation_only));
  CHECK(tree.children(r) == made);
  CHECK(tree.children(r, 2) == std::vector<NodeId>{made[0], made[1]});
  for (std::size_t k = 0; k < made.size(); ++k) {
    CHECK(tree.node(made[k]).parent == r);
    CHECK(tree.node(made[k]).child_index == k);
  }
  CHECK(tree.expansion_counter() == tree.size());
}

TEST_CASE("leaves_within") {
  SUBCASE("zero range returns the node") {
    DialogueTree tree = small_tree(4, 1);
    CHECK(leaves_within(tree, tree.roots()[0], 0) == std::vector<NodeId>{tree.roots()[0]});
  }
  SUBCASE("complete binary subtree of depth 2") {
    DialogueTree tree = small_tree(4, 1);
    const NodeId r = tree.roots()[0];
    for (int k = 0; k < 2; ++k) {
      const NodeId c = tree.add_child(r, sample(0, 0.1), NodeRole::observation_only);
      tree.add_child(c, sample(0, 0.1), NodeRole::observation_only);
      tree.add_child(c, sample(1, 0.1), NodeRole::observation_only);
    }
    CHECK(leaves_within(tree, r, 2).size() == 4);
  }
  SUBCASE("a terminated child counts once") {
    DialogueTree tree = small_tree(4, 1);
    const NodeId r = tree.roots()[0];
    const NodeId dead = tree.add_child(r, sample(0, 1.0, true), NodeRole::observation_only);
    const NodeId live = tree.add_child(r, sample(1, 0.1), NodeRole::observation_only);
    const NodeId g1 = tree.add_child(live, sample(0, 0.1), NodeRole::observation_only);
    const NodeId g2 = tree.add_child(live, sample(1, 0.1), NodeRole::observation_only);
    auto leaves = leaves_within(tree, r, 2);
    std::sort(leaves.begin(), leaves.end());
    CHECK(leaves == std::vector<NodeId>{dead, g1, g2});
  }
  SUBCASE("dangling handle") {
    DialogueTree tree = small_tree(4, 1);
    CHECK_THROWS_AS(leaves_within(tree, 99, 1), InternalError);
  }
}

TEST_CASE("aggregated reward is set once and only on group members") {
  DialogueTree tree = small_tree(4, 1);
  const NodeId r = tree.roots()[0];
  const NodeId obs = tree.add_child(r, sample(0, 0.1), NodeRole::observation_only);
  CHECK_THROWS_AS(tree.set_aggregated_reward(obs, 0.5), InternalError);
  tree.set_aggregated_reward(r, 0.5);
  CHECK(tree.node(r).aggregated_reward == doctest::Approx(0.5));
  CHECK_THROWS_AS(tree.set_aggregated_reward(r, 0.6), InternalError);
}

TEST_CASE("trajectory depth strictly increases") {
  DialogueTree tree = small_tree(4, 2);
  const NodeId c = tree.add_child(tree.roots()[0], sample(0, 0.1), NodeRole::group_member);
  tree.push_trajectory(tree.roots()[0]);
  CHECK_THROWS_AS(tree.push_trajectory(tree.roots()[1]), InternalError);
  tree.push_trajectory(c);
  CHECK(tree.trajectory().size() == 2);
}

TEST_CASE("history walks from the root") {
  DialogueTree tree = small_tree(5, 1);
  NodeId cur = tree.roots()[0];
  for (int k = 0; k < 3; ++k) cur = tree.add_child(cur, sample(k % 2, 0.1 * (k + 1)), NodeRole::observation_only);
  const auto h = tree.history(cur);
  REQUIRE(h.size() == 4);
  CHECK(h[1].p_term == doctest::Approx(0.1));
  CHECK(h[3].p_term == doctest::Approx(0.3));
}
