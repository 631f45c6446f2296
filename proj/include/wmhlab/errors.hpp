#pragma once

#include <stdexcept>
#include <string>

namespace wmhlab {

// Error hierarchy shared by the CLI exit-code mapping:
//   ConfigError -> 2, DataError (and subtypes) -> 3, TrainAbortError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

// WMHV1 file with a wrong or missing magic token.
struct BadMagicError : DataError {
    using DataError::DataError;
};

// Declared dims do not match the payload size (truncated or oversized file).
struct PayloadMismatchError : DataError {
    using DataError::DataError;
};

// Mask payload containing values other than 0/1.
struct NonBinaryMaskError : DataError {
    using DataError::DataError;
};

// Two grids that must share dims/spacing do not.
struct GridMismatchError : DataError {
    using DataError::DataError;
};

struct TrainAbortError : Error {
    using Error::Error;
};

} // namespace wmhlab
