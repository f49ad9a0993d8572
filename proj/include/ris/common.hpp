#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace ris {

// Base error for everything that goes wrong at runtime (I/O, numerics, ...).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input from the outside world: malformed files, invalid config values,
// contract violations on public entry points. The CLI maps these to exit 1.
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

}  // namespace ris

#define RIS_REQUIRE(cond, stream_expr)                  \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream oss_;                          \
      oss_ << stream_expr;                              \
      throw ::ris::Error(oss_.str());                   \
    }                                                   \
  } while (0)

#define RIS_VALIDATE(cond, stream_expr)                 \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream oss_;                          \
      oss_ << stream_expr;                              \
      throw ::ris::ValidationError(oss_.str());         \
    }                                                   \
  } while (0)
