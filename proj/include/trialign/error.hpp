#pragma once

#include <stdexcept>
#include <string>

namespace trialign {

// Error taxonomy; the CLI maps categories onto exit codes.
enum class ErrorCategory { InvalidInput, InvalidState, NumericalFailure };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category_(cat) {}

  ErrorCategory category() const noexcept { return category_; }

  const char* category_name() const noexcept {
    switch (category_) {
      case ErrorCategory::InvalidInput: return "invalid-input";
      case ErrorCategory::InvalidState: return "invalid-state";
      case ErrorCategory::NumericalFailure: return "numerical-failure";
    }
    return "unknown";
  }

private:
  ErrorCategory category_;
};

[[noreturn]] inline void throw_invalid_input(const std::string& msg) {
  throw Error(ErrorCategory::InvalidInput, msg);
}

[[noreturn]] inline void throw_invalid_state(const std::string& msg) {
  throw Error(ErrorCategory::InvalidState, msg);
}

[[noreturn]] inline void throw_numerical(const std::string& msg) {
  throw Error(ErrorCategory::NumericalFailure, msg);
}

}  // namespace trialign
