// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace vitcomer {

// Bad tensor dims, axis out of range, mismatched operand shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by an operation while finite checks are enabled.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid run configuration (bad key, bad value, violated invariant).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable/corrupt files (checkpoints, images).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace vitcomer
