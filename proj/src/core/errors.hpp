#pragma once

#include <stdexcept>
#include <string>

namespace covobf {

// Error taxonomy mirrored by the CLI exit codes and the C API status codes:
// usage errors (2) come from flag parsing, DataError (3) from malformed or
// inconsistent inputs, InvariantError (4) from violated internal contracts.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

struct InvariantError : Error {
  explicit InvariantError(const std::string& msg) : Error(msg) {}
};

}  // namespace covobf
