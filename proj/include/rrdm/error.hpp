#pragma once

#include <stdexcept>
#include <string>

namespace rrdm {

enum class ErrorKind {
  kParse,
  kValidation,
  kInvalidArgument,
  kNumerical,
  kInfeasible,
  kSchema,
  kIo,
  kMissingCondition,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace rrdm
