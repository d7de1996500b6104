#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dvp {

#ifdef DVP_REAL32
using real = float;
#else
using real = double;
#endif

// Incompatible tensor extents.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed external input (files, checkpoints).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization.
struct TrainFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dvp
