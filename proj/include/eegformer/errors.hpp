#pragma once

#include <stdexcept>
#include <string>

namespace eegformer {

// Exception taxonomy. The CLI maps these onto stable exit codes:
// usage/config/IO problems -> 2, data contract violations -> 3,
// numeric failures -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/shape disagreements (mismatched matmul dims, ragged batches).
struct DimensionError : Error {
  using Error::Error;
};

// An argument value outside its documented range.
struct ParameterError : Error {
  using Error::Error;
};

// An API precondition broken by the caller (non-scalar loss, label out of range).
struct ContractError : Error {
  using Error::Error;
};

// Input data that cannot be honored: unmappable labels, infeasible splits,
// window/checkpoint disagreements.
struct DataError : Error {
  using Error::Error;
};

// Missing or unwritable files.
struct IoError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Malformed file contents, with a 1-based line number when known.
struct FormatError : Error {
  explicit FormatError(const std::string& msg, long line = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_number(line) {}
  long line_number;
};

// Checkpoint loading failures, distinguishable by kind.
struct CheckpointError : Error {
  enum class Kind { bad_magic, bad_version, truncated, shape_mismatch };
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

}  // namespace eegformer
