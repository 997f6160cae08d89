// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include "atgrpo/user_env.hpp"

namespace atgrpo {

// Remote user protocol: newline-delimited JSON over a duplex byte stream.
//
//   {"op":"step","history":[<turn>...],"action":k,"step":n}
//       -> {"p":0.42,"signal":"[Continue]","terminated":false}
//   {"op":"reset"} -> {"ok":true}
//
// <turn> is {"action":k,"p":x,"signal":"...","terminated":b}. "p" in a reply is
// the final termination probability for that exchange (alpha already applied,
// which is why the RL step is sent along). Malformed requests get {"error":"..."}.

std::string encode_step_request(std::span<const TurnRecord> history, ActionId action, long step);
std::string encode_reset_request();

struct StepReply {
  double p = 0.0;
  std::string signal;
  bool terminated = false;
};

/// Throws EnvironmentError on malformed replies, error replies or p outside [0,1].
StepReply decode_step_reply(const std::string& line);

/// Request/response transport: one line out, one line back.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual std::string exchange(const std::string& line) = 0;
};

/// "tcp:host:port" connects a socket; "stdio:command" spawns `sh -c command`
/// and talks over its stdin/stdout.
std::unique_ptr<LineChannel> connect_channel(const std::string& address);

/// Environment served by another process. Calls are serialized on the channel;
/// replies depend only on the request, so results do not depend on call order.
class RemoteUser final : public UserEnvironment {
 public:
  RemoteUser(std::unique_ptr<LineChannel> channel, int num_actions, double threshold_lambda);

  int num_actions() const override { return num_actions_; }
  std::string name() const override { return "remote"; }
  bool needs_history() const override { return true; }
  StepResult step(std::span<const TurnRecord> history, const EnvState& state, ActionId action,
                  long step_count, SplitMix64& rng) const override;

  void reset();

 private:
  std::unique_ptr<LineChannel> channel_;
  int num_actions_;
  mutable std::mutex mutex_;
};

/// Answers one request line for `env`. Never throws; failures become error replies.
/// The server is stateless: each step replays the request history from the initial state.
std::string handle_request(const UserEnvironment& env, const std::string& line);

/// Serves requests line by line until EOF.
void serve_environment(const UserEnvironment& env, std::istream& in, std::ostream& out);

/// Listens on 127.0.0.1:`port` (0 picks a free port, reported through
/// `on_listening`) and serves `connections` clients one after another.
void serve_tcp(const UserEnvironment& env, unsigned short port, int connections,
               const std::function<void(unsigned short)>& on_listening = {});

}  // namespace atgrpo
