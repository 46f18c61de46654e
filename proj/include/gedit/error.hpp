#pragma once

#include <stdexcept>
#include <string>

namespace gedit {

// Bad input: malformed files, violated invariants, config mistakes.
// Maps to CLI exit code 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses, failed gradient checks. Maps to CLI exit code 2.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gedit
