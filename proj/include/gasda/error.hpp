#pragma once

#include <stdexcept>
#include <string>

namespace gasda {

// Tensor shapes do not conform to an operation's rule.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A primitive produced NaN/Inf, or an input violated a numeric precondition.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of the compute graph (non-scalar loss, consumed graph, ...).
struct GraphError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed file contents (PPM/PFM/checkpoint).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failures: unreadable or unwritable paths.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or unknown keys.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Training/evaluation inputs missing (corpus domain, checkpoint).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gasda
