// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace atgrpo {

/// Invalid or out-of-range configuration. `key()` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Argument outside a function's mathematical domain (bad action id, shape mismatch, w = 1, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation invoked in a state where it is not allowed (e.g. stepping a terminated dialogue).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Broken internal invariant: dangling handle, double aggregation, overfull group.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Failure inside a user environment, annotated with the node being expanded.
class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace atgrpo
