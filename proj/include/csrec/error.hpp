#pragma once

#include <stdexcept>
#include <string>

namespace csrec {

enum class ErrorKind {
  Usage,          // bad CLI usage or config
  Parse,          // malformed input row
  EmptyInput,
  EmptyAfterFilter,
  Parameter,      // argument outside its documented domain
  Shape,
  Numeric,        // non-finite values
  Input,          // id out of range, malformed sequence
  Consistency,    // artifacts disagree with each other
  Training,
  Teacher,
  Evaluation,
  UndefinedMetric,
  HandleMismatch,
  StaleArtifact,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

// CLI exit code: 1 usage/config, 2 data, 3 training, 4 evaluation.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace csrec
