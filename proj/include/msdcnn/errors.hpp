#pragma once

#include <stdexcept>
#include <string>

namespace msdcnn {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A geometrically impossible request, e.g. kernel extent larger than the
// padded input, or an image dimension that cannot be blocked.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// API misuse: out-of-range arguments, a backward cache consumed twice, etc.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared where the contract requires finite ones.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A file's contents are not in the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A checkpoint was written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// A file ended before the declared payload was complete.
class TruncationError : public Error {
 public:
  using Error::Error;
};

// The requested computation exceeds a hard enumeration budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (open/read/write); message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace msdcnn
