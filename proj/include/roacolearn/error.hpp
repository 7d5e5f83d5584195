#pragma once

#include <stdexcept>
#include <string>

namespace roa {

enum class ErrorCode {
  InvalidArgument = 1,
  DimensionMismatch,
  UnknownSystem,
  IntegrationOverflow,
  GapDegenerate,
  Conditioning,
  Divergence,
  NoClosedOrbit,
  Precondition,
  Io,
  Config,
  EmptyInterior,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code carries the category and
// maps one-to-one onto the C API status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace roa
