#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ofl {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand extents do not match an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed serialized data. `offset` is the byte position where parsing failed.
struct FormatError : Error {
    std::size_t offset;
    FormatError(std::size_t off, const std::string& what)
        : Error(what + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// Invalid configuration value or degenerate setup.
struct ConfigError : Error {
    using Error::Error;
};

// Operation issued against an object in the wrong state.
struct StateError : Error {
    using Error::Error;
};

// Input data violates a documented value contract (e.g. non-binary mask).
struct ValidationError : Error {
    using Error::Error;
};

// Filesystem failure; message names the offending path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace ofl
