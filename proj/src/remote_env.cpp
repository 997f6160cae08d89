// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/remote_env.hpp"

#include <istream>
#include <ostream>

#include <boost/asio.hpp>
#include <boost/process.hpp>
#include <nlohmann/json.hpp>

#include "atgrpo/errors.hpp"

namespace atgrpo {
namespace {

using nlohmann::json;

json turn_to_json(const TurnRecord& t) {
  return json{{"action", t.agent_action}, {"p", t.p_term}, {"signal", t.user_signal},
              {"terminated", t.terminated}};
}

TurnRecord turn_from_json(const json& j) {
  TurnRecord t;
  t.agent_action = j.at("action").get<int>();
  t.p_term = j.at("p").get<double>();
  t.reward = 1.0 - t.p_term;
  t.user_signal = intern_signal(j.value("signal", std::string{}));
  t.terminated = j.value("terminated", false);
  return t;
}

class StdioChannel final : public LineChannel {
 public:
  explicit StdioChannel(const std::string& command)
      : child_(boost::process::search_path("sh"), "-c", command,
               boost::process::std_out > from_child_, boost::process::std_in < to_child_) {}

  ~StdioChannel() override {
    to_child_.pipe().close();
    std::error_code ec;
    child_.wait(ec);
  }

  std::string exchange(const std::string& line) override {
    to_child_ << line << '\n' << std::flush;
    std::string reply;
    if (!std::getline(from_child_, reply)) throw EnvironmentError("remote process closed its output");
    return reply;
  }

 private:
  boost::process::ipstream from_child_;
  boost::process::opstream to_child_;
  boost::process::child child_;
};

class TcpChannel final : public LineChannel {
 public:
  TcpChannel(const std::string& host, const std::string& port) : stream_(host, port) {
    if (!stream_) {
      throw EnvironmentError("cannot connect to " + host + ":" + port + ": " + stream_.error().message());
    }
    stream_.socket().set_option(boost::asio::ip::tcp::no_delay(true));
  }

  std::string exchange(const std::string& line) override {
    stream_ << line << '\n' << std::flush;
    std::string reply;
    if (!std::getline(stream_, reply)) throw EnvironmentError("remote endpoint closed the connection");
    return reply;
  }

 private:
  boost::asio::ip::tcp::iostream stream_;
};

}  // namespace

std::string encode_step_request(std::span<const TurnRecord> history, ActionId action, long step) {
  json h = json::array();
  for (const TurnRecord& t : history) h.push_back(turn_to_json(t));
  return json{{"op", "step"}, {"history", std::move(h)}, {"action", action}, {"step", step}}.dump();
}

std::string encode_reset_request() { return json{{"op", "reset"}}.dump(); }

StepReply decode_step_reply(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw EnvironmentError(std::string("malformed reply from remote user: ") + e.what());
  }
  if (j.contains("error")) throw EnvironmentError("remote user error: " + j["error"].dump());
  try {
    StepReply r;
    r.p = j.at("p").get<double>();
    r.signal = j.value("signal", std::string{});
    r.terminated = j.value("terminated", false);
    if (!(r.p >= 0.0 && r.p <= 1.0)) throw EnvironmentError("remote user sent p outside [0,1]");
    return r;
  } catch (const json::exception& e) {
    throw EnvironmentError(std::string("incomplete reply from remote user: ") + e.what());
  }
}

std::unique_ptr<LineChannel> connect_channel(const std::string& address) {
  if (address.rfind("stdio:", 0) == 0) {
    const std::string command = address.substr(6);
    if (command.empty()) throw ConfigError("env", "stdio address needs a command");
    return std::make_unique<StdioChannel>(command);
  }
  if (address.rfind("tcp:", 0) == 0) {
    const std::string rest = address.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
      throw ConfigError("env", "expected tcp:host:port, got '" + address + "'");
    }
    return std::make_unique<TcpChannel>(rest.substr(0, colon), rest.substr(colon + 1));
  }
  throw ConfigError("env", "unknown environment address '" + address + "' (use tcp:host:port or stdio:command)");
}

RemoteUser::RemoteUser(std::unique_ptr<LineChannel> channel, int num_actions, double threshold_lambda)
    : UserEnvironment(threshold_lambda, TerminationMode::deterministic),
      channel_(std::move(channel)),
      num_actions_(num_actions) {
  if (num_actions < 1) throw ConfigError("num_topics", "remote environment needs >= 1 action");
}

StepResult RemoteUser::step(std::span<const TurnRecord> history, const EnvState& state, ActionId action,
                            long step_count, SplitMix64&) const {
  check_step(state, action);
  const std::string request = encode_step_request(history, action, step_count);
  std::string reply;
  {
    std::lock_guard lock(mutex_);
    reply = channel_->exchange(request);
  }
  const StepReply r = decode_step_reply(reply);

  StepResult out;
  out.turn.agent_action = action;
  out.turn.p_term = r.p;
  out.turn.reward = 1.0 - r.p;
  out.turn.terminated = r.terminated || r.p >= 1.0;
  out.turn.user_signal = intern_signal(r.signal);
  out.state = state;
  out.state.alpha = alpha_schedule(step_count, threshold_lambda());
  out.state.last_p = r.p;
  out.state.turn_index += 1;
  out.state.terminated = out.turn.terminated;
  return out;
}

void RemoteUser::reset() {
  std::lock_guard lock(mutex_);
  const json reply = json::parse(channel_->exchange(encode_reset_request()));
  if (!reply.value("ok", false)) throw EnvironmentError("remote user refused reset: " + reply.dump());
}

std::string handle_request(const UserEnvironment& env, const std::string& line) {
  try {
    const json req = json::parse(line);
    const std::string op = req.at("op").get<std::string>();
    if (op == "reset") return json{{"ok", true}}.dump();
    if (op != "step") return json{{"error", "unknown op '" + op + "'"}}.dump();

    const long step = req.at("step").get<long>();
    const ActionId action = req.at("action").get<int>();
    std::vector<TurnRecord> history;
    for (const auto& t : req.at("history")) history.push_back(turn_from_json(t));

    SplitMix64 rng(mix64(static_cast<std::uint64_t>(step) ^ mix64(history.size())));
    EnvState state = env.initial_state(step);
    for (std::size_t k = 0; k < history.size(); ++k) {
      StepResult r = env.step(std::span(history).first(k), state, history[k].agent_action, step, rng);
      state = r.state;
      state.terminated = history[k].terminated;  // follow the client's branch
    }
    const StepResult r = env.step(history, state, action, step, rng);
    return json{{"p", r.turn.p_term}, {"signal", r.turn.user_signal}, {"terminated", r.turn.terminated}}.dump();
  } catch (const std::exception& e) {
    return json{{"error", e.what()}}.dump();
  }
}

void serve_environment(const UserEnvironment& env, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle_request(env, line) << '\n' << std::flush;
  }
}

void serve_tcp(const UserEnvironment& env, unsigned short port, int connections,
               const std::function<void(unsigned short)>& on_listening) {
  namespace asio = boost::asio;
  asio::io_context io;
  asio::ip::tcp::acceptor acceptor(io, {asio::ip::address_v4::loopback(), port});
  if (on_listening) on_listening(acceptor.local_endpoint().port());
  for (int c = 0; c < connections; ++c) {
    asio::ip::tcp::iostream stream;
    acceptor.accept(stream.socket());
    stream.socket().set_option(asio::ip::tcp::no_delay(true));
    serve_environment(env, stream, stream);
  }
}

}  // namespace atgrpo
