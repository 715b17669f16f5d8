#pragma once

#include <stdexcept>
#include <string>

namespace vgocc {

/// Raised when a caller breaks an operation's preconditions (shape or
/// dimension mismatch, invalid configuration, out-of-range labels).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace vgocc
