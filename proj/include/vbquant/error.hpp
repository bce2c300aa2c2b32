#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vbquant {

enum class Errc {
  Parse,
  Axis,
  Empty,
  MissingExcitation,
  Domain,
  IllConditioned,
  EmptyWindow,
  NonConvergence,
  SingularJacobian,
  WindowTooSmall,
  AmbiguousIdentity,
  DegenerateGeometry,
  InsufficientData,
  AboveMaximum,
  NoSolution,
  InsufficientAngles,
  Io,
  Schema,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
  case Errc::Parse: return "ParseError";
  case Errc::Axis: return "AxisError";
  case Errc::Empty: return "EmptyError";
  case Errc::MissingExcitation: return "MissingExcitation";
  case Errc::Domain: return "DomainError";
  case Errc::IllConditioned: return "IllConditioned";
  case Errc::EmptyWindow: return "EmptyWindow";
  case Errc::NonConvergence: return "NonConvergence";
  case Errc::SingularJacobian: return "SingularJacobian";
  case Errc::WindowTooSmall: return "WindowTooSmall";
  case Errc::AmbiguousIdentity: return "AmbiguousIdentity";
  case Errc::DegenerateGeometry: return "DegenerateGeometry";
  case Errc::InsufficientData: return "InsufficientData";
  case Errc::AboveMaximum: return "AboveMaximum";
  case Errc::NoSolution: return "NoSolution";
  case Errc::InsufficientAngles: return "InsufficientAngles";
  case Errc::Io: return "IoError";
  case Errc::Schema: return "SchemaError";
  }
  return "Error";
}

/// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

} // namespace vbquant
