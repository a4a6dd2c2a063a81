#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsbias {

enum class ErrorKind {
  parse,
  validation,
  duplicate_key,
  fetch,
  protocol,
  storage,
  contract,
  domain,
  infeasible,
  configuration,
  empty_design,
  collinearity,
  insufficient_data,
  spec,
};

const char* to_string(ErrorKind kind);

// Process exit code for an error kind: 2 configuration, 3 data/validation,
// 4 insufficient data, 5 I/O.
int exit_code_for(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse failure tied to a 1-based line (text inputs) or a byte offset
// (binary inputs). Zero means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t byte_offset = 0);

  std::size_t line() const noexcept { return line_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t line_;
  std::size_t byte_offset_;
};

// Transport-level failure; the request may be retried.
class FetchError : public Error {
 public:
  explicit FetchError(const std::string& message) : Error(ErrorKind::fetch, message) {}
  bool retryable() const noexcept { return true; }
};

// Server answered, but not with something usable. Carries the raw body.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& message, int status, std::string raw_body)
      : Error(ErrorKind::protocol, message), status_(status), raw_body_(std::move(raw_body)) {}

  int status() const noexcept { return status_; }
  const std::string& raw_body() const noexcept { return raw_body_; }

 private:
  int status_;
  std::string raw_body_;
};

class CollinearityError : public Error {
 public:
  explicit CollinearityError(std::vector<std::string> columns);

  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

// Error raised by a pipeline stage; the message is prefixed with the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace qsbias
