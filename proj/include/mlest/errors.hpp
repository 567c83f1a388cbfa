#pragma once

#include <stdexcept>
#include <string>

namespace mlest {

/// Raised when a numerical routine cannot produce a trustworthy result
/// (factorization failure after jitter, non-finite intermediate values).
/// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mlest
