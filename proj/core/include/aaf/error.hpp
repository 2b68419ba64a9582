#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aaf {

enum class ErrorKind {
  Dimension,
  NumericDomain,
  EmptyInput,
  StaleTape,
  Config,
  Contract,
  Routing,
  DegenerateWeights,
  OracleScope,
  Divergence,
  FreezeAudit,
  Prerequisite,
  Format,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. The kind decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  /// what() is "<kind> error: <detail>".
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace aaf
