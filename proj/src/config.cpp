// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "atgrpo/errors.hpp"
#include "atgrpo/metrics.hpp"
#include "atgrpo/remote_env.hpp"

namespace atgrpo {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

const char* weighting_name(GroupWeighting w) {
  return w == GroupWeighting::equal ? "sum" : "mean";
}

GroupWeighting parse_weighting(const std::string& text) {
  if (text == "sum") return GroupWeighting::equal;
  if (text == "mean") return GroupWeighting::mean_over_groups;
  throw ConfigError("group_weighting", "expected sum or mean, got '" + text + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Key {
  const char* name;
  Setter set;
  Getter get;
};

#define ATGRPO_DOUBLE(key, field)                                                              \
  Key {                                                                                        \
    key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(key, v); },    \
        [](const ExperimentConfig& c) { return format_number(c.field); }                       \
  }
#define ATGRPO_INT(key, field, type)                                                           \
  Key {                                                                                        \
    key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_int<type>(key, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"preset", [](ExperimentConfig& c, const std::string& v) { c.preset = parse_preset(v); },
       [](const ExperimentConfig& c) { return std::string(preset_name(c.preset)); }},
      ATGRPO_INT("group_size_W", hparams.group_size, int),
      ATGRPO_INT("adaptive_width_w", hparams.adaptive_width, int),
      ATGRPO_DOUBLE("gamma", hparams.gamma),
      ATGRPO_DOUBLE("omega", hparams.omega),
      ATGRPO_INT("max_depth_L", hparams.max_depth, int),
      ATGRPO_DOUBLE("clip_epsilon", hparams.clip_epsilon),
      ATGRPO_DOUBLE("kl_beta", hparams.kl_beta),
      ATGRPO_DOUBLE("threshold_lambda", hparams.threshold_lambda),
      ATGRPO_DOUBLE("learning_rate", hparams.learning_rate),
      ATGRPO_INT("rng_seed", hparams.rng_seed, std::uint64_t),
      ATGRPO_INT("steps", steps, long),
      ATGRPO_INT("eval_interval", train.eval_interval, int),
      ATGRPO_INT("eval_episodes", train.eval_episodes, int),
      ATGRPO_INT("threads", train.threads, int),
      {"group_weighting",
       [](ExperimentConfig& c, const std::string& v) { c.train.weighting = parse_weighting(v); },
       [](const ExperimentConfig& c) { return std::string(weighting_name(c.train.weighting)); }},
      {"stochastic_termination",
       [](ExperimentConfig& c, const std::string& v) {
         c.stochastic_termination = parse_bool("stochastic_termination", v);
       },
       [](const ExperimentConfig& c) { return std::string(c.stochastic_termination ? "true" : "false"); }},
      ATGRPO_INT("num_topics", env.num_topics, int),
      {"interest_profile",
       [](ExperimentConfig& c, const std::string& v) {
         c.env.interest_profile = parse_list("interest_profile", v);
       },
       [](const ExperimentConfig& c) {
         std::string s;
         for (double x : c.env.interest_profile) s += (s.empty() ? "" : ",") + format_number(x);
         return s;
       }},
      ATGRPO_DOUBLE("engagement_decay", env.engagement_decay),
      ATGRPO_DOUBLE("engagement_weight", env.engagement_weight),
      ATGRPO_DOUBLE("trap_bonus", env.trap_bonus),
      ATGRPO_DOUBLE("trap_penalty_rate", env.trap_penalty_rate),
      ATGRPO_INT("trap_action", env.trap_action, int),
      ATGRPO_DOUBLE("exploration_unlock", env.exploration_unlock),
      ATGRPO_DOUBLE("base_logit", env.base_logit),
      ATGRPO_DOUBLE("trap_base_p", trap.trap_base_p),
      ATGRPO_DOUBLE("trap_increment", trap.trap_increment),
      ATGRPO_DOUBLE("explore_base_p", trap.explore_base_p),
      ATGRPO_DOUBLE("explore_unlocked_p", trap.explore_unlocked_p),
      ATGRPO_INT("unlock_uses", trap.unlock_uses, int),
  };
  return table;
}

#undef ATGRPO_DOUBLE
#undef ATGRPO_INT

}  // namespace

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::trap: return "trap";
    case Preset::topics: return "topics";
    case Preset::flat: return "flat";
  }
  return "?";
}

Preset parse_preset(const std::string& name) {
  if (name == "trap") return Preset::trap;
  if (name == "topics") return Preset::topics;
  if (name == "flat") return Preset::flat;
  throw ConfigError("preset", "unknown preset '" + name + "' (trap, topics, flat)");
}

EnvConfig preset_env_config(Preset p) {
  EnvConfig c;
  if (p == Preset::flat) {
    c.num_topics = 2;
    c.interest_profile = {0.5, 0.5};
    c.exploration_unlock = 0.0;
  }
  return c;
}

void ExperimentConfig::validate() const {
  hparams.validate();
  if (preset == Preset::trap) {
    trap.validate();
  } else {
    env.validate();
  }
  if (steps < 1) throw ConfigError("steps", "must be >= 1");
  if (train.eval_interval < 1) throw ConfigError("eval_interval", "must be >= 1");
  if (train.eval_episodes < 1) throw ConfigError("eval_episodes", "must be >= 1");
  if (train.threads < 1) throw ConfigError("threads", "must be >= 1");
}

ExperimentConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected key = value, got '" + text + "'");
    }
    const std::string key = trim(std::string_view(text).substr(0, eq));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    const auto& table = keys();
    if (std::none_of(table.begin(), table.end(), [&](const Key& k) { return key == k.name; })) {
      throw ConfigError(key, "unknown configuration key");
    }
    if (!values.emplace(key, value).second) throw ConfigError(key, "given more than once");
  }

  ExperimentConfig c;
  if (const auto it = values.find("preset"); it != values.end()) c.preset = parse_preset(it->second);
  c.env = preset_env_config(c.preset);
  for (const Key& k : keys()) {
    if (const auto it = values.find(k.name); it != values.end()) k.set(c, it->second);
  }
  c.validate();
  return c;
}

ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  return parse_config(in);
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

std::unique_ptr<UserEnvironment> make_environment(const ExperimentConfig& config, const std::string& address) {
  const double lambda = config.hparams.threshold_lambda;
  if (!address.empty()) {
    const int actions = config.preset == Preset::trap ? 2 : config.env.num_topics;
    return std::make_unique<RemoteUser>(connect_channel(address), actions, lambda);
  }
  const auto mode = config.stochastic_termination ? TerminationMode::stochastic : TerminationMode::deterministic;
  if (config.preset == Preset::trap) return std::make_unique<TrapUser>(config.trap, lambda, mode);
  return std::make_unique<TopicUser>(config.env, lambda, mode);
}

}  // namespace atgrpo
