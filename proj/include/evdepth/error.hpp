#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evdepth {

/// Coarse failure classes. The CLI maps each to a distinct exit code and
/// prints the name as the first token of its one-line diagnostic.
enum class ErrorCategory {
  kUsage,
  kIo,
  kFormat,
  kShape,
  kConfig,
  kNumeric,
  kRange,
};

constexpr std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kUsage: return "usage";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kFormat: return "format";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kRange: return "range";
  }
  return "unknown";
}

constexpr int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kUsage: return 2;
    case ErrorCategory::kIo: return 3;
    case ErrorCategory::kFormat: return 4;
    case ErrorCategory::kShape: return 5;
    case ErrorCategory::kConfig: return 6;
    case ErrorCategory::kNumeric: return 7;
    case ErrorCategory::kRange: return 8;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace evdepth
