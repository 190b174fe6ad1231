#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scone {

/// An elementary operation was applied outside its domain (log of a
/// non-positive value, division by zero).
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, std::size_t node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}

  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scone
