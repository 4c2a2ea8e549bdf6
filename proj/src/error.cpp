#include "proxigmm/error.hpp"

namespace proxigmm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DegenerateConfounding: return "DegenerateConfounding";
    case ErrorCode::RankDeficientJacobian: return "RankDeficientJacobian";
    case ErrorCode::TooFewMoments: return "TooFewMoments";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularVariance: return "SingularVariance";
    case ErrorCode::SingularUpsilonBlock: return "SingularUpsilonBlock";
    case ErrorCode::AllCandidatesSingular: return "AllCandidatesSingular";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::WeakRank: return "WeakRank";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn:
    case ErrorCode::UnknownColumn:
    case ErrorCode::NonBinaryTreatment:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::EmptyData:
    case ErrorCode::MalformedCsv:
      return ErrorCategory::data;
    case ErrorCode::InvalidArgument:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::KTooLarge:
      return ErrorCategory::config;
    default:
      return ErrorCategory::numeric;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace proxigmm
