#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace poc {

/// Failure classes raised across the library. Verification failures are
/// reported as `Verdict` values rather than thrown, except where an operation
/// contract requires an exception (ledger finalize).
enum class Errc {
  kOverflow,
  kDomainError,
  kZeroVector,
  kLayoutMismatch,
  kShapeMismatch,
  kEmptyInput,
  kDivergence,
  kInsufficientData,
  kMissingPrevious,
  kTooFew,
  kEmptyEval,
  kTooManyTrainers,
  kVerifyFail,
  kNotFound,
  kInsufficientDeposit,
  kInvalidDescriptor,
  kWrongPhase,
  kWrongRound,
  kDuplicateRegistration,
  kDuplicateSubmission,
  kUnknownTrainer,
  kUnauthorized,
  kMissingTranscript,
  kMalformed,
  kConfigError,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace poc
