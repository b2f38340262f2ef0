#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace agrocausal {

enum class ErrorCode {
  // graph
  CycleDetected,
  DanglingEdge,
  DuplicateEdge,
  SelfLoop,
  UnknownNode,
  MissingDesignation,
  NoAdjustmentSet,
  // data
  MissingColumn,
  TypeViolation,
  EmptyFile,
  ZeroDenominator,
  TooFewPoints,
  UnknownColumn,
  NoNearbyObservation,
  // estimation
  SingleClass,
  EmptyAfterTrim,
  RankDeficient,
  EmptyGroup,
  TooFewRows,
  EstimatorFailure,
  InsufficientReplicates,
  // simulation
  SpecGraphMismatch,
  // rules and forecasts
  InsufficientHorizon,
  MissingMap,
  OutOfGrid,
  ExtentMismatch,
  IssueDateMismatch,
  MissingVariable,
  NoOverlap,
  // plumbing
  InvalidArgument,
  Io,
  Parse,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::MissingDesignation: return "MissingDesignation";
    case ErrorCode::NoAdjustmentSet: return "NoAdjustmentSet";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::TypeViolation: return "TypeViolation";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::NoNearbyObservation: return "NoNearbyObservation";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::EmptyAfterTrim: return "EmptyAfterTrim";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::EstimatorFailure: return "EstimatorFailure";
    case ErrorCode::InsufficientReplicates: return "InsufficientReplicates";
    case ErrorCode::SpecGraphMismatch: return "SpecGraphMismatch";
    case ErrorCode::InsufficientHorizon: return "InsufficientHorizon";
    case ErrorCode::MissingMap: return "MissingMap";
    case ErrorCode::OutOfGrid: return "OutOfGrid";
    case ErrorCode::ExtentMismatch: return "ExtentMismatch";
    case ErrorCode::IssueDateMismatch: return "IssueDateMismatch";
    case ErrorCode::MissingVariable: return "MissingVariable";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library. `subjects` carries
/// the names the error refers to (offending columns, cycle members, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::vector<std::string> subjects = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        subjects_(std::move(subjects)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& subjects() const noexcept { return subjects_; }

 private:
  ErrorCode code_;
  std::vector<std::string> subjects_;
};

/// A CSV cell that does not parse as its declared column type. `row` is the
/// 1-based data row (the header is row 0).
class TypeViolation : public Error {
 public:
  TypeViolation(std::size_t row, std::string column, const std::string& value)
      : Error(ErrorCode::TypeViolation,
              "row " + std::to_string(row) + ", column '" + column +
                  "': cannot parse '" + value + "'",
              {column}),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class InsufficientHorizon : public Error {
 public:
  InsufficientHorizon(std::string variable, std::size_t needed,
                      std::size_t available)
      : Error(ErrorCode::InsufficientHorizon,
              variable + " needs " + std::to_string(needed) +
                  " days, only " + std::to_string(available) + " available",
              {variable}),
        needed_(needed),
        available_(available) {}

  std::size_t needed() const noexcept { return needed_; }
  std::size_t available() const noexcept { return available_; }

 private:
  std::size_t needed_;
  std::size_t available_;
};

}  // namespace agrocausal
