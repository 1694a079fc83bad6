#pragma once

#include <stdexcept>
#include <string>

namespace mmgt {

/// Bad input: malformed files, contract violations, unknown config keys.
/// Maps to CLI exit status 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while computing: non-finite loss, empty neighbourhood, I/O during a run.
/// Maps to CLI exit status 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmgt
