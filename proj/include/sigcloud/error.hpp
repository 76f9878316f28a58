#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sigcloud {

enum class ErrorCode {
  Format,               // malformed image or payload
  InsufficientData,     // too few points for a curve operation
  Domain,               // numeric argument outside its domain
  Validation,           // structurally invalid input
  EnrollmentRejected,   // a sample cannot be simplified into a curve
  Conflict,             // state precondition violated (duplicate, already decided)
  NotFound,
  Integrity,            // checksum mismatch, corrupt store
  ContractViolation,    // caller broke an API contract (e.g. learning from a rejection)
  Io,
  Network,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Format: return "format_error";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::Domain: return "domain_error";
    case ErrorCode::Validation: return "validation_error";
    case ErrorCode::EnrollmentRejected: return "enrollment_rejected";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Integrity: return "integrity_error";
    case ErrorCode::ContractViolation: return "contract_violation";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Network: return "network_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sigcloud
