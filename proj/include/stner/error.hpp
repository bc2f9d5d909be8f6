#pragma once

#include <stdexcept>
#include <string>

namespace stner {

// Failure categories double as process exit codes for the command-line tool.
enum class ErrorCategory {
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kDivergence = 5,
  kMissingPrerequisite = 6,
  kInfeasible = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

inline Error usage_error(const std::string& what) { return {ErrorCategory::kUsage, what}; }
inline Error io_error(const std::string& what) { return {ErrorCategory::kIo, what}; }
inline Error format_error(const std::string& what) { return {ErrorCategory::kFormat, what}; }
inline Error infeasible_error(const std::string& what) {
  return {ErrorCategory::kInfeasible, what};
}

}  // namespace stner
