// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include "atgrpo/trainer.hpp"
#include "atgrpo/types.hpp"
#include "atgrpo/user_env.hpp"

namespace atgrpo {

enum class Preset {
  trap,    // two-action immediate-reward trap
  topics,  // multi-topic interest exploration
  flat,    // every action equivalent; no delayed structure
};

const char* preset_name(Preset p);
Preset parse_preset(const std::string& name);

/// Everything an experiment needs besides the method and the seed list.
struct ExperimentConfig {
  Hyperparams hparams;
  Preset preset = Preset::trap;
  EnvConfig env;    // used by topics and flat
  TrapConfig trap;  // used by trap
  bool stochastic_termination = false;
  long steps = 200;
  TrainOptions train;

  void validate() const;
};

/// Topic-user parameters of a preset (trap ignores them).
EnvConfig preset_env_config(Preset p);

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped;
/// `preset` is applied first, so other keys override its values regardless of
/// order. Unknown keys, repeated keys and out-of-range values throw ConfigError.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_string(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text: every key, fixed order, shortest round-trip numbers.
std::string dump_config(const ExperimentConfig& config);

/// Local environment for the configured preset, or a remote one when `address`
/// (tcp:host:port or stdio:command) is non-empty.
std::unique_ptr<UserEnvironment> make_environment(const ExperimentConfig& config,
                                                  const std::string& address = {});

}  // namespace atgrpo
