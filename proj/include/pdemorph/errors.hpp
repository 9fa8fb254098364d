#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdemorph {

/// Syntax error in expression or manifest text. `offset` is a byte offset
/// into the offending source string.
struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(std::size_t off, const std::string& msg)
      : std::runtime_error(msg + " (at byte " + std::to_string(off) + ")"),
        offset(off) {}
};

/// Domain failure while evaluating an expression (log of a non-positive
/// value, division by zero, unbound variable, non-finite result).
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mathematical precondition violated by data (singular metric, empty range,
/// non-monotone substitution, inconsistent fibering...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pdemorph
