#pragma once

#include <stdexcept>
#include <string>

namespace cvsim {

/// A physics or numerical budget was violated at run time (truncation leakage,
/// loss of positivity, grid too small). Precondition violations on arguments
/// are reported with std::invalid_argument / std::out_of_range instead.
class PhysicsError : public std::runtime_error {
 public:
  explicit PhysicsError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cvsim
