// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "atgrpo/budget.hpp"
#include "atgrpo/errors.hpp"
#include "atgrpo/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace atgrpo;
using testing_support::sample;
using testing_support::ScriptedUser;

namespace {

Hyperparams params(int W, int w, double gamma, int L) {
  Hyperparams hp;
  hp.group_size = W;
  hp.adaptive_width = w;
  hp.gamma = gamma;
  hp.max_depth = L;
  return hp;
}

TreeBuild build(const UserEnvironment& env, const Hyperparams& hp, std::uint64_t seed, int threads = 1,
                const PolicyParams* policy = nullptr) {
  const PolicyParams p = policy ? *policy : initial_policy(env);
  const RolloutSampler sampler(snapshot(p), env, hp.max_depth, 0, threads);
  SplitMix64 select(seed ^ 0x55);
  return build_tree(identical_contexts(env, hp.group_size, 0), sampler, hp, seed, select,
                    adaptive_schedule(hp.max_depth, hp.gamma));
}

}  // namespace

TEST_CASE("observation length") {
  CHECK(observation_length(10, 10, 2.0) == 0);
  CHECK(observation_length(1, 10, 2.0) == 5);
  CHECK(observation_length(6, 10, 2.0) == 3);
  for (int L : {1, 5, 10, 33, 64}) {
    for (double g : {0.5, 1.0, 2.0, 3.7}) {
      int prev = observation_length(1, L, g);
      for (int i = 1; i <= L; ++i) {
        const int l = observation_length(i, L, g);
        CHECK(l == oracle::obs_len(i, L, g));
        CHECK(l <= prev);
        prev = l;
      }
    }
  }
  CHECK_THROWS_AS(observation_length(0, 10, 2.0), DomainError);
  CHECK_THROWS_AS(observation_length(11, 10, 2.0), DomainError);
}

TEST_CASE("expand_subtree") {
  const TopicUser env(non_terminating_config(), 0.0);
  const RolloutSampler sampler(snapshot(initial_policy(env)), env, 10, 0);

  SUBCASE("zero depth returns the node") {
    DialogueTree tree = new_tree(identical_contexts(env, 2, 0), sampler, 1);
    const auto leaves = expand_subtree(tree, tree.roots()[0], 2, 0, sampler);
    CHECK(leaves == std::vector<NodeId>{tree.roots()[0]});
    CHECK(tree.size() == 2);
  }
  SUBCASE("two levels of width two") {
    DialogueTree tree = new_tree(identical_contexts(env, 2, 0), sampler, 1);
    const auto leaves = expand_subtree(tree, tree.roots()[0], 2, 2, sampler);
    CHECK(tree.size() == 2 + 6);
    CHECK(tree.observation_created() == 6);
    CHECK(leaves.size() == 4);
    for (NodeId n = 2; n < tree.size(); ++n) CHECK(tree.node(n).role == NodeRole::observation_only);
  }
  SUBCASE("a terminated first child") {
    DialogueTree tree = testing_support::small_tree(10, 1);
    const NodeId r = tree.roots()[0];
    const NodeId dead = tree.add_child(r, sample(0, 1.0, true), NodeRole::observation_only);
    const auto leaves = expand_subtree(tree, r, 2, 2, sampler);
    CHECK(tree.observation_created() + tree.observation_reused() == 4);
    CHECK(tree.observation_reused() == 1);
    CHECK(leaves.size() == 3);
    CHECK(std::count(leaves.begin(), leaves.end(), dead) == 1);
  }
}

TEST_CASE("parallel expansion is identical to sequential") {
  const TrapUser env(TrapConfig{}, 0.02);
  SplitMix64 rng(9);
  PolicyParams p = initial_policy(env);
  for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = rng.uniform() - 0.5;
  const Hyperparams hp = params(8, 2, 2.0, 10);
  const TreeBuild a = build(env, hp, 77, 1, &p);
  const TreeBuild b = build(env, hp, 77, 4, &p);
  REQUIRE(a.tree.size() == b.tree.size());
  for (NodeId n = 0; n < a.tree.size(); ++n) {
    CHECK(a.tree.node(n).turn.p_term == b.tree.node(n).turn.p_term);
    CHECK(a.tree.node(n).turn.agent_action == b.tree.node(n).turn.agent_action);
    CHECK(a.tree.node(n).parent == b.tree.node(n).parent);
    CHECK(a.tree.node(n).aggregated_reward == b.tree.node(n).aggregated_reward);
  }
}

TEST_CASE("aggregate reward") {
  DialogueTree tree = testing_support::small_tree(4, 1);
  const NodeId r = tree.roots()[0];
  tree.node(r).turn.reward = 0.5;
  const NodeId a = tree.add_child(r, sample(0, 0.0), NodeRole::observation_only);
  const NodeId b = tree.add_child(r, sample(1, 1.0, true), NodeRole::observation_only);
  const std::array<NodeId, 2> leaves{a, b};
  CHECK(aggregate_reward(tree, r, leaves, 0.3) == doctest::Approx(0.5));

  DialogueTree t2 = testing_support::small_tree(4, 1);
  t2.node(t2.roots()[0]).turn.reward = 0.8;
  const NodeId c = t2.add_child(t2.roots()[0], sample(0, 0.75), NodeRole::observation_only);
  const std::array<NodeId, 1> one{c};
  CHECK(aggregate_reward(t2, t2.roots()[0], one, 1.0) == doctest::Approx(0.8));

  DialogueTree t3 = testing_support::small_tree(4, 1);
  t3.node(t3.roots()[0]).turn.reward = 0.35;
  const std::array<NodeId, 1> self{t3.roots()[0]};
  CHECK(aggregate_reward(t3, t3.roots()[0], self, 0.3) == doctest::Approx(0.35));

  DialogueTree t4 = testing_support::small_tree(4, 1);
  CHECK_THROWS_AS(aggregate_reward(t4, t4.roots()[0], std::span<const NodeId>{}, 0.3), InternalError);
}

TEST_CASE("group advantages") {
  for (double v : group_advantages(std::vector<double>{0.4, 0.4, 0.4})) CHECK(v == 0.0);
  const auto two = group_advantages(std::vector<double>{0.0, 2.0});
  CHECK(two[0] == doctest::Approx(-1.0));
  CHECK(two[1] == doctest::Approx(1.0));
  SplitMix64 rng(3);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> x(2 + rng.below(10));
    for (double& v : x) v = rng.uniform();
    const auto adv = group_advantages(x);
    const double n = static_cast<double>(adv.size());
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
    double var = 0;
    for (double v : adv) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(std::sqrt(var / n) - 1.0) <= 1e-9);
  }
}

TEST_CASE("trajectory selection") {
  DialogueTree tree = testing_support::small_tree(4, 4);
  Group g;
  g.members = tree.roots();
  SplitMix64 rng(1);
  SUBCASE("uniform over non-leaf members") {
    std::array<int, 4> hits{};
    for (int k = 0; k < 100000; ++k) {
      DialogueTree t = testing_support::small_tree(4, 4);
      Group gg;
      gg.members = t.roots();
      const auto c = select_trajectory_node(t, gg, rng);
      REQUIRE(c);
      ++hits[*c];
    }
    for (int h : hits) CHECK(h / 100000.0 == doctest::Approx(0.25).epsilon(0.04));
  }
  SUBCASE("only one candidate") {
    DialogueTree t = testing_support::small_tree(2, 1);
    const NodeId r = t.roots()[0];
    std::vector<NodeId> members{r};
    for (int k = 0; k < 3; ++k) members.push_back(t.add_child(r, sample(0, 0.1), NodeRole::group_member));
    Group one;
    one.members = {members[1], members[2], members[0]};
    const auto c = select_trajectory_node(t, one, rng);
    CHECK(c == r);
    CHECK(t.node(r).role == NodeRole::trajectory_selected);
  }
  SUBCASE("all leaves") {
    DialogueTree t = testing_support::small_tree(1, 3);
    Group leaves;
    leaves.members = t.roots();
    CHECK_FALSE(select_trajectory_node(t, leaves, rng));
  }
}

TEST_CASE("populate group") {
  const TopicUser env(non_terminating_config(), 0.0);
  const RolloutSampler sampler(snapshot(initial_policy(env)), env, 10, 0);
  SUBCASE("reuses the observed children") {
    DialogueTree tree = new_tree(identical_contexts(env, 8, 0), sampler, 5);
    const NodeId r = tree.roots()[3];
    expand_subtree(tree, r, 2, 1, sampler);
    const auto before = tree.children(r);
    const TurnRecord t0 = tree.node(before[0]).turn;
    const EnvState s0 = tree.node(before[0]).state;
    const Group g = populate_group(tree, r, 8, sampler);
    CHECK(tree.population_created() == 6);
    REQUIRE(g.members.size() == 8);
    CHECK(g.members[0] == before[0]);
    CHECK(g.members[1] == before[1]);
    CHECK(tree.node(before[0]).turn.p_term == t0.p_term);
    CHECK(tree.node(before[0]).turn.user_signal == t0.user_signal);
    CHECK(tree.node(before[0]).turn.agent_action == t0.agent_action);
    CHECK(tree.node(before[0]).state == s0);
    for (NodeId m : g.members) {
      CHECK(tree.node(m).role == NodeRole::group_member);
      CHECK(tree.node(m).parent == r);
      CHECK(tree.node(m).depth == 1);
    }
  }
  SUBCASE("nothing to reuse") {
    DialogueTree tree = new_tree(identical_contexts(env, 8, 0), sampler, 5);
    const Group g = populate_group(tree, tree.roots()[0], 8, sampler);
    CHECK(tree.population_created() == 8);
    CHECK(g.members.size() == 8);
  }
  SUBCASE("leaf node") {
    DialogueTree tree = testing_support::small_tree(1, 2);
    CHECK_THROWS_AS(populate_group(tree, tree.roots()[0], 2, sampler), InternalError);
  }
}

TEST_CASE("build tree") {
  SUBCASE("single layer") {
    const TopicUser env(non_terminating_config(), 0.0);
    const TreeBuild b = build(env, params(8, 2, 2.0, 1), 3);
    CHECK(b.groups.size() == 1);
    CHECK(b.tree.trajectory().empty());
    CHECK(b.tree.size() == 8);
  }
  SUBCASE("full run without termination") {
    const TopicUser env(non_terminating_config(), 0.0);
    const TreeBuild b = build(env, params(8, 2, 2.0, 10), 3);
    CHECK(b.groups.size() == 10);
    CHECK(b.tree.trajectory().size() == 9);
    const DialogueTree& t = b.tree;
    CHECK(t.observation_created() + t.observation_reused() == predicted_budget(8, 2, 2.0, 10));
    CHECK(t.observation_created() + t.observation_reused() == 1744);
    CHECK(t.expansion_counter() ==
          predicted_budget(8, 2, 2.0, 10) - t.observation_reused() + t.root_count() + t.population_created());
    for (std::size_t k = 0; k < b.groups.size(); ++k) {
      const Group& g = b.groups[k];
      CHECK(g.depth == static_cast<int>(k));
      REQUIRE(g.members.size() == 8);
      for (NodeId m : g.members) {
        CHECK(t.node(m).depth == g.depth);
        CHECK(t.node(m).parent == t.node(g.members[0]).parent);
        CHECK(t.node(m).aggregated_reward.has_value());
      }
    }
    for (std::size_t k = 0; k + 1 < b.groups.size(); ++k) {
      CHECK(t.node(b.groups[k + 1].members[0]).parent == t.trajectory()[k]);
    }
  }
  SUBCASE("every root terminates") {
    const ScriptedUser env(2, [](const EnvState&, ActionId) { return 0.6; });
    const TreeBuild b = build(env, params(8, 2, 2.0, 10), 3);
    CHECK(b.groups.size() == 1);
    CHECK(b.tree.size() == 8);
    for (double a : b.groups[0].advantages) CHECK(a == 0.0);
  }
  SUBCASE("wrong number of contexts") {
    const TopicUser env(non_terminating_config(), 0.0);
    const RolloutSampler sampler(snapshot(initial_policy(env)), env, 4, 0);
    SplitMix64 rng(1);
    CHECK_THROWS_AS(build_tree(identical_contexts(env, 3, 0), sampler, params(4, 2, 2.0, 4), 1, rng,
                               adaptive_schedule(4, 2.0)),
                    ConfigError);
  }
}

namespace {

GroupBatch random_batch(int members, int features, int actions, SplitMix64& rng) {
  GroupBatch b;
  std::vector<double> raw;
  for (int j = 0; j < members; ++j) {
    std::vector<double> x(static_cast<std::size_t>(features));
    for (double& v : x) v = 2 * rng.uniform() - 1;
    b.nodes.push_back(static_cast<NodeId>(j));
    b.contexts.push_back(x);
    b.actions.push_back(static_cast<ActionId>(rng.below(static_cast<std::uint64_t>(actions))));
    raw.push_back(rng.uniform());
  }
  b.advantages = group_advantages(raw);
  return b;
}

PolicyParams random_policy(int actions, int features, SplitMix64& rng, double scale) {
  PolicyParams p(actions, features);
  for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = scale * (2 * rng.uniform() - 1);
  return p;
}

}  // namespace

TEST_CASE("group objective gradient") {
  SplitMix64 rng(17);
  SUBCASE("ratio one reduces to the policy gradient") {
    const PolicyParams live = random_policy(3, 4, rng, 1.0);
    const GroupBatch b = random_batch(6, 4, 3, rng);
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(3, 4);
    for (std::size_t j = 0; j < 6; ++j) expect += b.advantages[j] * log_prob_grad(live, b.contexts[j], b.actions[j]);
    expect /= 6.0;
    const Eigen::MatrixXd g = group_objective_grad(b, live, live, live, 0.2, 0.0);
    CHECK((g - expect).norm() <= 1e-14);
  }
  SUBCASE("zero advantages") {
    const PolicyParams live = random_policy(3, 4, rng, 1.0);
    GroupBatch b = random_batch(5, 4, 3, rng);
    std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
    const PolicyParams old = random_policy(3, 4, rng, 1.0);
    CHECK(group_objective_grad(b, live, old, old, 0.2, 0.0).norm() == 0.0);
  }
  SUBCASE("clipped members contribute nothing") {
    PolicyParams live(2, 1), old(2, 1);
    live.weights(0, 0) = 2.0;  // rho for action 0 far above 1 + eps
    GroupBatch b;
    b.nodes = {0};
    b.contexts = {{1.0}};
    b.actions = {0};
    b.advantages = {1.0};
    CHECK(group_objective_grad(b, live, old, old, 0.2, 0.0).norm() == 0.0);
    b.advantages = {-1.0};
    CHECK(group_objective_grad(b, live, old, old, 0.2, 0.0).norm() > 0.0);
  }
  SUBCASE("matches central differences") {
    for (int k = 0; k < 50; ++k) {
      const PolicyParams live = random_policy(3, 4, rng, 1.0);
      PolicyParams old = live;
      old.weights += random_policy(3, 4, rng, 0.05).weights;
      const PolicyParams ref = random_policy(3, 4, rng, 1.0);
      const GroupBatch b = random_batch(6, 4, 3, rng);
      const Eigen::MatrixXd g = group_objective_grad(b, live, old, ref, 0.2, 0.05);
      std::vector<double> flat_live(live.weights.data(), live.weights.data() + live.weights.size());
      const auto fd = oracle::central_diff(
          flat_live,
          [&](const std::vector<double>& v) {
            PolicyParams p = live;
            std::copy(v.begin(), v.end(), p.weights.data());
            return group_objective(b, p, old, ref, 0.2, 0.05);
          },
          1e-6);
      std::vector<double> flat_g(g.data(), g.data() + g.size());
      CHECK(oracle::rel_error(flat_g, fd) <= 1e-4);
    }
  }
  SUBCASE("non-finite ratio names the node") {
    PolicyParams live(2, 1), old(2, 1);
    live.weights(0, 0) = 1000.0;
    old.weights(0, 0) = -1000.0;
    GroupBatch b;
    b.nodes = {42};
    b.contexts = {{1.0}};
    b.actions = {0};
    b.advantages = {1.0};
    CHECK_THROWS_WITH_AS(group_objective_grad(b, live, old, old, 0.2, 0.0), doctest::Contains("node 42"),
                         DomainError);
  }
}

TEST_CASE("train step") {
  const TrapUser env(TrapConfig{}, 0.02);
  Hyperparams hp;
  hp.rng_seed = 5;
  SUBCASE("zero learning rate leaves the policy alone") {
    hp.learning_rate = 0.0;
    PolicyParams p = initial_policy(env);
    const PolicyParams ref = p;
    const StepMetrics m = train_step(p, env, hp, ref, 0);
    CHECK(p.weights == ref.weights);
    CHECK(m.budget > 0);
    CHECK(m.groups >= 1);
  }
  SUBCASE("same seed, same record") {
    PolicyParams a = initial_policy(env), b = initial_policy(env);
    const PolicyParams ref = a;
    for (long s = 0; s < 5; ++s) {
      TrainOptions seq, par;
      par.threads = 3;
      CHECK(to_jsonl(train_step(a, env, hp, ref, s, seq)) == to_jsonl(train_step(b, env, hp, ref, s, par)));
    }
    CHECK(a.weights == b.weights);
  }
}

TEST_CASE("train run") {
  const TrapUser env(TrapConfig{}, 0.02);
  Hyperparams hp;
  hp.rng_seed = 8;
  SUBCASE("one step equals one train step") {
    PolicyParams p = initial_policy(env);
    const StepMetrics direct = train_step(p, env, hp, initial_policy(env), 0);
    const RunReport r = train_run(initial_policy(env), env, hp, 1);
    REQUIRE(r.steps.size() == 1);
    StepMetrics copy = r.steps[0];
    copy.avg_reward.reset();
    copy.avg_length.reset();
    copy.greedy_first_action.reset();
    CHECK(to_jsonl(copy) == to_jsonl(direct));
    CHECK(r.final_policy.weights == p.weights);
  }
  SUBCASE("alpha rises and evaluation follows the interval") {
    TrainOptions o;
    o.eval_interval = 7;
    const RunReport r = train_run(initial_policy(env), env, hp, 30, o);
    double prev = 1.0;
    for (const StepMetrics& m : r.steps) {
      CHECK(m.alpha >= prev);
      prev = m.alpha;
      CHECK(m.avg_length.has_value() == (m.step % 7 == 0 || m.step == 29));
    }
    CHECK(r.steps.back().alpha == doctest::Approx(1.04));
  }
  SUBCASE("learns to explore first in the trap") {
    const RunReport r = train_run(initial_policy(env), env, hp, 200);
    CHECK(r.steps.back().greedy_first_action == TrapConfig::kExplore);
  }
  SUBCASE("rejects an empty run") {
    CHECK_THROWS_AS(train_run(initial_policy(env), env, hp, 0), ConfigError);
  }
}
