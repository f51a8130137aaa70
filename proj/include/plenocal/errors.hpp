#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plenocal {

enum class ErrorKind {
  DegenerateRays,
  SingularParams,
  PointAtInfinity,
  NonInvertible,
  BehindPlane,
  MissingReference,
  InsufficientData,
  DegenerateBoard,
  InsufficientPoses,
  IllConditioned,
  NegativeDiscriminant,
  ReflectionDetected,
  DivergedOptimization,
  NonFiniteResidual,
  NoGridFound,
  AmbiguousPitch,
  DegenerateGeometry,
  TooFewCenters,
  DegenerateConfiguration,
  FocalSingularity,
  EnvelopeInfeasible,
  InvalidInput,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for every recoverable failure in the library.
/// The kind is the stable, machine-checkable part; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateRays: return "DegenerateRays";
    case ErrorKind::SingularParams: return "SingularParams";
    case ErrorKind::PointAtInfinity: return "PointAtInfinity";
    case ErrorKind::NonInvertible: return "NonInvertible";
    case ErrorKind::BehindPlane: return "BehindPlane";
    case ErrorKind::MissingReference: return "MissingReference";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DegenerateBoard: return "DegenerateBoard";
    case ErrorKind::InsufficientPoses: return "InsufficientPoses";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::NegativeDiscriminant: return "NegativeDiscriminant";
    case ErrorKind::ReflectionDetected: return "ReflectionDetected";
    case ErrorKind::DivergedOptimization: return "DivergedOptimization";
    case ErrorKind::NonFiniteResidual: return "NonFiniteResidual";
    case ErrorKind::NoGridFound: return "NoGridFound";
    case ErrorKind::AmbiguousPitch: return "AmbiguousPitch";
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::TooFewCenters: return "TooFewCenters";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::FocalSingularity: return "FocalSingularity";
    case ErrorKind::EnvelopeInfeasible: return "EnvelopeInfeasible";
    case ErrorKind::InvalidInput: return "InvalidInput";
  }
  return "Unknown";
}

}  // namespace plenocal
