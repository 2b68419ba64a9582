#include "aaf/error.hpp"

namespace aaf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::NumericDomain: return "numeric-domain";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::StaleTape: return "stale-tape";
    case ErrorKind::Config: return "config";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Routing: return "routing";
    case ErrorKind::DegenerateWeights: return "degenerate-weights";
    case ErrorKind::OracleScope: return "oracle-scope";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::FreezeAudit: return "freeze-audit";
    case ErrorKind::Prerequisite: return "prerequisite";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + detail), kind_(kind), detail_(detail) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace aaf
