#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ems {

enum class Errc {
  OffSphere,
  InvalidSpeed,
  AmbiguousGeodesic,
  ParseError,
  ValidationError,
  Unreachable,
  EmptyGraph,
  InvalidRegion,
  Infeasible,
  InvalidDuration,
  UnknownTypePair,
  EmptyFleet,
  OutOfRange,
  InvalidStep,
  EmptySelection,
  InvalidFilter,
  ConfigError,
  IoError,
  MaxIterations,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::OffSphere: return "OffSphere";
    case Errc::InvalidSpeed: return "InvalidSpeed";
    case Errc::AmbiguousGeodesic: return "AmbiguousGeodesic";
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
    case Errc::Unreachable: return "Unreachable";
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::InvalidRegion: return "InvalidRegion";
    case Errc::Infeasible: return "Infeasible";
    case Errc::InvalidDuration: return "InvalidDuration";
    case Errc::UnknownTypePair: return "UnknownTypePair";
    case Errc::EmptyFleet: return "EmptyFleet";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::InvalidStep: return "InvalidStep";
    case Errc::EmptySelection: return "EmptySelection";
    case Errc::InvalidFilter: return "InvalidFilter";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ems
