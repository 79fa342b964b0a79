#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqcontest {

enum class ErrorCode {
  EmptySequence,
  NonPositiveStageCount,
  NegativeInvestment,
  InvestmentExceedsEndowment,
  InvalidWinner,
  InvalidSpec,
  NoRootInUnitInterval,
  NonPositiveMean,
  InvalidPlayerCount,
  GridTooLarge,
  InputOutOfRange,
  UnsupportedTreatment,
  RoleObservationMismatch,
  BadGroupComposition,
  RankDeficientDesign,
  TooFewClusters,
  TooFewGroups,
  EmptyLog,
  SchemaMismatch,
  ConfigInvalid,
  IoFailure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::NonPositiveStageCount: return "NonPositiveStageCount";
    case ErrorCode::NegativeInvestment: return "NegativeInvestment";
    case ErrorCode::InvestmentExceedsEndowment: return "InvestmentExceedsEndowment";
    case ErrorCode::InvalidWinner: return "InvalidWinner";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NoRootInUnitInterval: return "NoRootInUnitInterval";
    case ErrorCode::NonPositiveMean: return "NonPositiveMean";
    case ErrorCode::InvalidPlayerCount: return "InvalidPlayerCount";
    case ErrorCode::GridTooLarge: return "GridTooLarge";
    case ErrorCode::InputOutOfRange: return "InputOutOfRange";
    case ErrorCode::UnsupportedTreatment: return "UnsupportedTreatment";
    case ErrorCode::RoleObservationMismatch: return "RoleObservationMismatch";
    case ErrorCode::BadGroupComposition: return "BadGroupComposition";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::TooFewClusters: return "TooFewClusters";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::EmptyLog: return "EmptyLog";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace seqcontest
