#pragma once

#include <stdexcept>
#include <string>

namespace alnbeam {

// Error taxonomy used across the library and reported by the CLI.
enum class ErrorCategory { kConfig, kFormat, kData, kState };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kState: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& msg)
      : std::runtime_error(msg), category_(category) {}

  ErrorCategory category() const { return category_; }

  static Error config(const std::string& msg) { return {ErrorCategory::kConfig, msg}; }
  static Error format(const std::string& msg) { return {ErrorCategory::kFormat, msg}; }
  static Error data(const std::string& msg) { return {ErrorCategory::kData, msg}; }
  static Error state(const std::string& msg) { return {ErrorCategory::kState, msg}; }

 private:
  ErrorCategory category_;
};

}  // namespace alnbeam
