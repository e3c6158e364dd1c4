#pragma once

#include <stdexcept>
#include <string>

namespace finch {

// Every failure surfaced by the pipeline carries one of these kinds so that
// callers (and the CLI) can map errors to distinct exit paths.
enum class ErrorKind {
  Parse,
  Dimension,
  Lifecycle,
  Structure,
  UnsupportedInit,
  DuplicateEntry,
  Contract,
  ProtocolUnsupported,
  UnsupportedIndex,
  MalformedLooplet,
  NonTermination,
  Plan,
  Exec,
  Io,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Dimension: return "DimensionError";
    case ErrorKind::Lifecycle: return "LifecycleError";
    case ErrorKind::Structure: return "StructureViolation";
    case ErrorKind::UnsupportedInit: return "UnsupportedInit";
    case ErrorKind::DuplicateEntry: return "DuplicateEntry";
    case ErrorKind::Contract: return "ContractError";
    case ErrorKind::ProtocolUnsupported: return "ProtocolUnsupported";
    case ErrorKind::UnsupportedIndex: return "UnsupportedIndex";
    case ErrorKind::MalformedLooplet: return "MalformedLooplet";
    case ErrorKind::NonTermination: return "NonTermination";
    case ErrorKind::Plan: return "PlanError";
    case ErrorKind::Exec: return "ExecError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace finch
