#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace proxigmm {

enum class ErrorCode {
  // data
  MissingColumn,
  UnknownColumn,
  NonBinaryTreatment,
  NonFiniteValue,
  EmptyData,
  MalformedCsv,
  // configuration / usage
  InvalidArgument,
  DimensionMismatch,
  KTooLarge,
  // numeric
  DegenerateColumn,
  RankDeficient,
  DegenerateConfounding,
  RankDeficientJacobian,
  TooFewMoments,
  NoConvergence,
  SingularVariance,
  SingularUpsilonBlock,
  AllCandidatesSingular,
  RankDeficientDesign,
  SingularSystem,
  WeakRank,
};

enum class ErrorCategory { config, data, numeric };

std::string_view to_string(ErrorCode code);
ErrorCategory category(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return proxigmm::category(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace proxigmm
