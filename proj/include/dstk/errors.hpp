#pragma once

#include <stdexcept>
#include <string>

namespace dstk {

// Malformed data, contract violations, bad configuration values.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/rank mismatches between tensors. A DataError so the CLI maps it
// to the data exit code.
struct DimensionError : DataError {
    using DataError::DataError;
};

// Filesystem and network-destination failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace dstk
