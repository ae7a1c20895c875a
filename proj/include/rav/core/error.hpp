#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rav {

enum class ErrorCategory {
  contract_violation,
  invalid_config,
  missing_artifact,
  io_error,
  format_error,
  not_detectable,
  internal,
};

std::string_view category_name(ErrorCategory category);

// Process exit code used by the CLI for each category.
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

inline void require(bool condition, const std::string& message,
                    ErrorCategory category = ErrorCategory::contract_violation) {
  if (!condition) throw Error(category, message);
}

}  // namespace rav
