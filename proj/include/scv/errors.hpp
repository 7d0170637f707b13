#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scv {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Inconsistent tensor extents. The message carries expected vs actual.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  ShapeError(const std::string& what, const Shape& expected, const Shape& actual)
      : std::runtime_error(what + ": expected " + shape_str(expected) + ", got " +
                           shape_str(actual)) {}
};

/// NaN/Inf produced by an op, or a non-finite training loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the gradient tape (non-scalar loss, reused tape).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or unreadable file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that is readable but unusable (mismatched sets, bad extents).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scv
