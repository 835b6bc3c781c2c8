#pragma once

#include <stdexcept>
#include <string>

namespace avloc {

// Error taxonomy mirrored by the C API status codes and CLI exit codes:
// validation errors exit 2, everything else exits 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace avloc
