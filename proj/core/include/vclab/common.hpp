#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vclab {

inline constexpr int kVersionMajor = 0;
inline constexpr int kVersionMinor = 1;

enum class ErrorCode {
  kInvalidArgument,
  kInvalidState,
  kIo,
  kConfig,
  kNoDictionaryFound,
  kEmptyAxes,
  kDuplicateAxis,
  kRemote,
  kCheckpoint,
  kNumeric,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kInvalidState: return "invalid state";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kNoDictionaryFound: return "no dictionary found";
    case ErrorCode::kEmptyAxes: return "empty axes";
    case ErrorCode::kDuplicateAxis: return "duplicate axis";
    case ErrorCode::kRemote: return "remote error";
    case ErrorCode::kCheckpoint: return "checkpoint error";
    case ErrorCode::kNumeric: return "numeric error";
  }
  return "unknown error";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vclab

#define VCLAB_CHECK(cond, code, msg)                         \
  do {                                                       \
    if (!(cond)) {                                           \
      std::ostringstream vclab_check_oss;                    \
      vclab_check_oss << msg;                                \
      ::vclab::fail((code), vclab_check_oss.str());          \
    }                                                        \
  } while (0)

#define VCLAB_CHECK_ARG(cond, msg) \
  VCLAB_CHECK(cond, ::vclab::ErrorCode::kInvalidArgument, msg)
