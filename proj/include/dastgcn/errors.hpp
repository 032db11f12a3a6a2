#pragma once

#include <stdexcept>
#include <string>

namespace dastgcn {

// Common base so the CLI can catch one type and map it to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (matmul inner dims, adjacency vs signal, ...).
struct DimensionError : Error {
    using Error::Error;
};

// Invalid hyperparameter or layer configuration (even kernel width, dilation < 1, ...).
struct ConfigError : Error {
    using Error::Error;
};

// A call contract was violated (non-scalar loss, empty sample set, label out of range).
struct ContractError : Error {
    using Error::Error;
};

// Filesystem failures: missing or unwritable files.
struct IoError : Error {
    using Error::Error;
};

// Structurally bad on-disk data: wrong magic, header/manifest conflicts.
struct DataError : Error {
    using Error::Error;
};

// Pretrained graph incompatible with the receiving model (N or d mismatch).
struct TransferError : Error {
    using Error::Error;
};

}  // namespace dastgcn
