#pragma once

#include <stdexcept>
#include <string>

namespace fedfreeze {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values anywhere in the numeric pipeline (divergence included).
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// A round that cannot complete (below quorum, lost connections).
struct RoundError : Error {
    using Error::Error;
};

}  // namespace fedfreeze
