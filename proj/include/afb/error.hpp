#pragma once

#include <stdexcept>
#include <string>

namespace afb {

/// Base class for all library errors. Catch this to handle anything thrown here.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or truncated file content (bad magic, short read, garbage counts).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure: missing file, unwritable path, failed stream.
class IoError : public Error {
public:
    using Error::Error;
};

/// A mesh or field violates a documented invariant; message names the offender.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Surface edge set is not a single traversable chain or loop.
class TopologyError : public Error {
public:
    using Error::Error;
};

/// Geometry too degenerate to operate on (zero-area triangle, zero-length edge).
class DegenerateGeometryError : public Error {
public:
    using Error::Error;
};

/// Caller passed an out-of-domain argument value.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Tensor dimensions do not line up for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Statistics cannot be fitted from the given data (e.g. no surface nodes).
class StatsError : public Error {
public:
    using Error::Error;
};

/// A local least-squares system is rank deficient (too few or collinear neighbors).
class RankError : public Error {
public:
    using Error::Error;
};

/// Inconsistent or incomplete model / run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace afb
