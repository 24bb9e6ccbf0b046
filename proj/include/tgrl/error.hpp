#pragma once

#include <stdexcept>
#include <string>

namespace tgrl {

// Caller passed a value outside an operation's domain (bad token id, shape mismatch).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration. `key` is the dotted path of the offending field when known.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, std::string key = {})
      : std::invalid_argument(key.empty() ? message : key + ": " + message),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// A precondition between modules was violated (missing log-prob record, wrong origin).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Loss or gradient became NaN/Inf during training. `dump` holds a JSON
// description of the offending rollout group.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& message, std::string dump)
      : std::runtime_error(message), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

}  // namespace tgrl
