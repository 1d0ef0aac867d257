#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace asap {

/// Tensor shapes or widths that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reduction over an empty set of rows.
class EmptyReductionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values reaching an op that cannot handle them.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bad configuration value (architecture, scene or run config).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data. `offset()` is the byte offset where decoding failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace asap
