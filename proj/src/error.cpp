#include "roacolearn/error.hpp"

namespace roa {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::UnknownSystem: return "unknown system";
    case ErrorCode::IntegrationOverflow: return "integration overflow";
    case ErrorCode::GapDegenerate: return "gap degenerate";
    case ErrorCode::Conditioning: return "ill-conditioned system";
    case ErrorCode::Divergence: return "training diverged";
    case ErrorCode::NoClosedOrbit: return "no closed orbit";
    case ErrorCode::Precondition: return "precondition violated";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::Config: return "configuration error";
    case ErrorCode::EmptyInterior: return "empty interior";
  }
  return "unknown error";
}

}  // namespace roa
