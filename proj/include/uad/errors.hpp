#pragma once

#include <stdexcept>
#include <string>

namespace uad {

/// Base class for all pipeline errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated type invariant (CLI exit code 2).
struct ValidationError : Error {
    using Error::Error;
};

/// File system / serialization failure (CLI exit code 3).
struct IoError : Error {
    using Error::Error;
};

/// Malformed or inconsistent data content (CLI exit code 3).
struct DataError : Error {
    using Error::Error;
};

}  // namespace uad
