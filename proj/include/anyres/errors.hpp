#pragma once

#include <stdexcept>
#include <string>

namespace anyres {

// Bad wiring between components (shape mismatches, missing calibration data).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint blob does not match its manifest hash, or is truncated/garbled.
struct CorruptCheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint written by an incompatible format version.
struct UnsupportedFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace anyres
