#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace portraitid {

/// A caller violated an operation's precondition or a data invariant.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public ContractError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ContractError(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A file that an operation depends on is absent or unreadable.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace portraitid
