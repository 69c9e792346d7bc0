#pragma once

#include <stdexcept>
#include <string>

namespace sdg {

enum class ErrorCode {
  invalid_argument = 1,
  io = 2,
  bad_checkpoint = 3,
  bad_config = 4,
  numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sdg
