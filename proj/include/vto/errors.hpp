#pragma once

#include <stdexcept>
#include <string>

namespace vto {

/// Invalid parameter values or configuration documents.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (manifests, checkpoints, pair lists).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vto
