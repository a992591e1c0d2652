#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace improv {

/// Malformed or out-of-contract input data (bad file, bad config, empty
/// corpus, ...). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure (divergence, non-finite values). CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse failure in a binary format; carries the byte offset of the problem.
struct ParseError : DataError {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t at)
      : DataError(msg + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
};

}
