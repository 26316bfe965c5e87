#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace regionvlm {

// Input outside an operation's mathematical domain (coordinate > 1, empty mask, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed text input. Carries the byte offset (or line number) of the failure.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Prompt longer than the language model's context window.
class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

}  // namespace regionvlm
