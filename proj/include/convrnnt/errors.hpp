#pragma once

#include <stdexcept>
#include <string>

namespace convrnnt {

// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed caller input (audio too short, token id out of range, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Problems with corpus data, files on disk, or training numerics.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace convrnnt
