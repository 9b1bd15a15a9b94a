#pragma once

#include <stdexcept>
#include <string>

namespace sf {

// Raised when tensor or image extents do not line up. The message names the
// offending axis so callers can report it without re-deriving shapes.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const std::string& axis, const std::string& detail)
      : std::runtime_error(op + ": shape mismatch on axis '" + axis + "': " + detail),
        axis_(axis) {}

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or activations during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sf
