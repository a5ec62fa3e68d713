#include "compfscil/error.hpp"

namespace compfscil {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::DegenerateSet: return "DegenerateSet";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::BadVersion: return "BadVersion";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::UnknownDtype: return "UnknownDtype";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace compfscil
