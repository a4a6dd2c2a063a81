#include "qsbias/error.hpp"

namespace qsbias {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::duplicate_key: return "duplicate_key";
    case ErrorKind::fetch: return "fetch";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::storage: return "storage";
    case ErrorKind::contract: return "contract";
    case ErrorKind::domain: return "domain";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::empty_design: return "empty_design";
    case ErrorKind::collinearity: return "collinearity";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::spec: return "spec";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::configuration:
    case ErrorKind::spec:
      return 2;
    case ErrorKind::empty_design:
    case ErrorKind::insufficient_data:
      return 4;
    case ErrorKind::storage:
    case ErrorKind::fetch:
      return 5;
    default:
      return 3;
  }
}

namespace {

std::string with_location(const std::string& message, std::size_t line, std::size_t offset) {
  if (line > 0) return "line " + std::to_string(line) + ": " + message;
  if (offset > 0) return "byte " + std::to_string(offset) + ": " + message;
  return message;
}

std::string join_columns(const std::vector<std::string>& columns) {
  std::string out = "design is rank deficient; collinear columns:";
  for (const auto& c : columns) out += " " + c;
  return out;
}

}  // namespace

ParseError::ParseError(const std::string& message, std::size_t line, std::size_t byte_offset)
    : Error(ErrorKind::parse, with_location(message, line, byte_offset)),
      line_(line),
      byte_offset_(byte_offset) {}

CollinearityError::CollinearityError(std::vector<std::string> columns)
    : Error(ErrorKind::collinearity, join_columns(columns)), columns_(std::move(columns)) {}

}  // namespace qsbias
