#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lata {

enum class ErrorCode {
  io,
  malformed_header,
  unknown_dtype,
  offset_overlap,
  offset_range,
  truncated,
  invariant,
  schema_mismatch,
  family_mismatch,
  partition,
  layer_range,
  no_layers,
  scheme,
  non_finite,
  config,
  unresolved_ref,
  fixture,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::malformed_header: return "malformed-header";
    case ErrorCode::unknown_dtype: return "unknown-dtype";
    case ErrorCode::offset_overlap: return "offset-overlap";
    case ErrorCode::offset_range: return "offset-range";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::invariant: return "invariant";
    case ErrorCode::schema_mismatch: return "schema-mismatch";
    case ErrorCode::family_mismatch: return "family-mismatch";
    case ErrorCode::partition: return "partition";
    case ErrorCode::layer_range: return "layer-range";
    case ErrorCode::no_layers: return "no-layers";
    case ErrorCode::scheme: return "scheme";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::config: return "config";
    case ErrorCode::unresolved_ref: return "unresolved-ref";
    case ErrorCode::fixture: return "fixture";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace lata
