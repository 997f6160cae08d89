// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <future>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "atgrpo/errors.hpp"
#include "atgrpo/remote_env.hpp"
#include "atgrpo/trainer.hpp"

using namespace atgrpo;

namespace {

// Channel that answers in-process, for exercising the client without sockets.
class DirectChannel final : public LineChannel {
 public:
  explicit DirectChannel(const UserEnvironment& env) : env_(env) {}
  std::string exchange(const std::string& line) override { return handle_request(env_, line); }

 private:
  const UserEnvironment& env_;
};

TreeBuild build(const UserEnvironment& env, const PolicyParams& p, std::uint64_t seed) {
  Hyperparams hp;
  const RolloutSampler sampler(snapshot(p), env, hp.max_depth, 120);
  SplitMix64 rng(seed);
  return build_tree(identical_contexts(env, hp.group_size, 120), sampler, hp, seed, rng,
                    adaptive_schedule(hp.max_depth, hp.gamma));
}

void check_same_turns(const DialogueTree& a, const DialogueTree& b) {
  REQUIRE(a.size() == b.size());
  for (NodeId n = 0; n < a.size(); ++n) {
    CHECK(a.node(n).turn.agent_action == b.node(n).turn.agent_action);
    CHECK(a.node(n).turn.p_term == b.node(n).turn.p_term);
    CHECK(a.node(n).turn.terminated == b.node(n).turn.terminated);
    CHECK(a.node(n).turn.user_signal == b.node(n).turn.user_signal);
  }
}

PolicyParams tilted(const UserEnvironment& env) {
  PolicyParams p = initial_policy(env);
  p.weights(0, p.feature_length() - 1) = 0.3;
  return p;
}

}  // namespace

TEST_CASE("reply decoding") {
  const StepReply r = decode_step_reply(R"({"p":0.25,"signal":"[Continue]","terminated":false})");
  CHECK(r.p == 0.25);
  CHECK(r.signal == "[Continue]");
  CHECK_FALSE(r.terminated);
  CHECK_THROWS_AS(decode_step_reply("not json"), EnvironmentError);
  CHECK_THROWS_AS(decode_step_reply(R"({"error":"boom"})"), EnvironmentError);
  CHECK_THROWS_AS(decode_step_reply(R"({"p":1.5,"signal":"x","terminated":false})"), EnvironmentError);
  CHECK_THROWS_AS(decode_step_reply(R"({"signal":"x"})"), EnvironmentError);
}

TEST_CASE("server answers like the local user") {
  const TrapUser env(TrapConfig{}, 0.02);
  const long step = 150;
  EnvState s = env.initial_state(step);
  std::vector<TurnRecord> history;
  SplitMix64 rng(1);
  for (ActionId a : {1, 1, 1, 0}) {
    const StepResult local = env.step(history, s, a, step, rng);
    const StepReply remote = decode_step_reply(handle_request(env, encode_step_request(history, a, step)));
    CHECK(remote.p == local.turn.p_term);
    CHECK(remote.terminated == local.turn.terminated);
    CHECK(remote.signal == local.turn.user_signal);
    history.push_back(local.turn);
    s = local.state;
  }
  CHECK(nlohmann::json::parse(handle_request(env, "{")).contains("error"));
  CHECK(nlohmann::json::parse(handle_request(env, R"({"op":"dance"})")).contains("error"));
  CHECK(nlohmann::json::parse(handle_request(env, encode_step_request({}, 7, 0))).contains("error"));
  CHECK(nlohmann::json::parse(handle_request(env, encode_reset_request())).value("ok", false));
}

TEST_CASE("remote trees match local trees") {
  const TrapUser env(TrapConfig{}, 0.02);
  const RemoteUser remote(std::make_unique<DirectChannel>(env), 2, 0.02);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    check_same_turns(build(env, tilted(env), seed).tree, build(remote, tilted(env), seed).tree);
  }
}

TEST_CASE("tcp transport") {
  const TrapUser env(TrapConfig{}, 0.02);
  std::promise<unsigned short> port;
  std::thread server([&] { serve_tcp(env, 0, 1, [&](unsigned short p) { port.set_value(p); }); });
  {
    RemoteUser remote(connect_channel("tcp:127.0.0.1:" + std::to_string(port.get_future().get())), 2, 0.02);
    remote.reset();
    check_same_turns(build(env, tilted(env), 9).tree, build(remote, tilted(env), 9).tree);
  }
  server.join();
}

#ifdef ATGRPO_CLI_PATH
TEST_CASE("stdio transport") {
  const TrapUser env(TrapConfig{}, 0.02);
  RemoteUser remote(connect_channel(std::string("stdio:") + ATGRPO_CLI_PATH + " serve-env"), 2, 0.02);
  check_same_turns(build(env, tilted(env), 4).tree, build(remote, tilted(env), 4).tree);
}
#endif

TEST_CASE("bad addresses") {
  CHECK_THROWS_AS(connect_channel("udp:1.2.3.4:5"), ConfigError);
  CHECK_THROWS_AS(connect_channel("tcp:localhost"), ConfigError);
  CHECK_THROWS_AS(connect_channel("stdio:"), ConfigError);
}
