#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace streamweave {

enum class Errc {
  EmptyWindow,
  InsufficientSamples,
  UndefinedCorrelation,
  InvalidLag,
  NeedTwoStreams,
  DegenerateFit,
  UndefinedBias,
  DivergentObjective,
  InvalidInstance,
  SolverStalled,
  UnknownStream,
  WindowClosed,
  MalformedPayload,
  BadMagic,
  Truncated,
  TrailingGarbage,
  ModelFlagInconsistent,
  NotFound,
  DuplicateWindow,
  CorruptLog,
  InvalidSpec,
  ParseError,
  SchemaError,
  UndefinedNRMSE,
  Infeasible,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyWindow: return "EmptyWindow";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::UndefinedCorrelation: return "UndefinedCorrelation";
    case Errc::InvalidLag: return "InvalidLag";
    case Errc::NeedTwoStreams: return "NeedTwoStreams";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::UndefinedBias: return "UndefinedBias";
    case Errc::DivergentObjective: return "DivergentObjective";
    case Errc::InvalidInstance: return "InvalidInstance";
    case Errc::SolverStalled: return "SolverStalled";
    case Errc::UnknownStream: return "UnknownStream";
    case Errc::WindowClosed: return "WindowClosed";
    case Errc::MalformedPayload: return "MalformedPayload";
    case Errc::BadMagic: return "BadMagic";
    case Errc::Truncated: return "Truncated";
    case Errc::TrailingGarbage: return "TrailingGarbage";
    case Errc::ModelFlagInconsistent: return "ModelFlagInconsistent";
    case Errc::NotFound: return "NotFound";
    case Errc::DuplicateWindow: return "DuplicateWindow";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::ParseError: return "ParseError";
    case Errc::SchemaError: return "SchemaError";
    case Errc::UndefinedNRMSE: return "UndefinedNRMSE";
    case Errc::Infeasible: return "Infeasible";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace streamweave
