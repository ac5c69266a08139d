#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

namespace dpm {

// Error kinds carried by dpm::Error. The string form is what appears in
// serialized error bodies, so keep the names stable.
enum class ErrorCode {
  MalformedCsv,
  DuplicateVisit,
  NonBinaryValue,
  NegativeAge,
  UnknownColumn,
  InvalidConfig,
  UnknownVariable,
  DegenerateData,
  EmptySamples,
  SyntaxError,
  DuplicateAttr,
  BadAttrValue,
  StateOutOfRange,
  NotFound,
  TrainingBusy,
  ValidationError,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::DuplicateVisit: return "DuplicateVisit";
    case ErrorCode::NonBinaryValue: return "NonBinaryValue";
    case ErrorCode::NegativeAge: return "NegativeAge";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::DuplicateAttr: return "DuplicateAttr";
    case ErrorCode::BadAttrValue: return "BadAttrValue";
    case ErrorCode::StateOutOfRange: return "StateOutOfRange";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::TrainingBusy: return "TrainingBusy";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }

  // {code, message, detail?}
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["code"] = to_string(code_);
    j["message"] = what();
    if (!detail_.empty()) j["detail"] = detail_;
    return j;
  }

 private:
  ErrorCode code_;
  nlohmann::json detail_;
};

}  // namespace dpm
