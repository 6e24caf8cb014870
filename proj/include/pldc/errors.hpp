#pragma once

#include <stdexcept>
#include <string>

namespace pldc {

// Bad argument values (non-finite input, zero sizes, bad ratios, ...).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input is well-formed but violates a domain rule (unknown label, missing class, ragged ranks).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed text input. Carries the 1-based line number when known.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;
};

}  // namespace pldc
