#include "semiroute/error.hpp"

namespace semiroute {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::io: return "io";
    case ErrorCategory::alignment: return "alignment";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::format: return "format";
    case ErrorCategory::config: return "config";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::degenerate_input: return "degenerate_input";
    case ErrorCategory::degenerate_centroid: return "degenerate_centroid";
    case ErrorCategory::routing: return "routing";
    case ErrorCategory::unavailable: return "unavailable";
    case ErrorCategory::timeout: return "timeout";
    case ErrorCategory::backend: return "backend";
    case ErrorCategory::classifier: return "classifier";
    case ErrorCategory::embedder: return "embedder";
  }
  return "unknown";
}

}  // namespace semiroute
