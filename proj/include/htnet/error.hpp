#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace htnet {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor shapes (messages name both shapes).
struct ShapeError : Error {
  using Error::Error;
};

// Conv/pool/grid geometry that cannot produce a valid output.
struct GeometryError : Error {
  using Error::Error;
};

// API contract violations (e.g. backward on a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

// Invalid model or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Bad input data: manifests, landmarks, frame sequences, degenerate splits.
struct DataError : Error {
  using Error::Error;
};

// Malformed serialized file; carries the byte offset where parsing failed.
struct FormatError : Error {
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Numerical failure during training (NaN/Inf loss).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace htnet
