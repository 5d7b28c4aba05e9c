#pragma once

#include <stdexcept>
#include <string>

// Exception types shared across the library. Every failure mode raised by
// minidl maps onto one of these; nothing else is thrown on purpose.

namespace minidl {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents disagree with what an operation requires.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// A forward pass produced NaN/Inf, or training hit a non-finite loss.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// An argument is outside its mathematical domain (e.g. dropout p >= 1).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

// Misuse of the autodiff tape (backward twice, non-scalar loss, ...).
struct GraphError : Error {
    explicit GraphError(const std::string& msg) : Error("graph error: " + msg) {}
};

// An index (class label, layer id, ...) is out of range.
struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

// Malformed file contents (bad magic, truncated payload, ...).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Well-formed but outside the supported subset (e.g. 16-bit PNM).
struct UnsupportedError : Error {
    explicit UnsupportedError(const std::string& msg) : Error("unsupported: " + msg) {}
};

// Invalid model / experiment configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct EmptyDatasetError : Error {
    explicit EmptyDatasetError(const std::string& msg) : Error("empty dataset: " + msg) {}
};

struct EmptyReferenceError : Error {
    explicit EmptyReferenceError(const std::string& msg) : Error("empty reference set: " + msg) {}
};

struct InsufficientPoolError : Error {
    explicit InsufficientPoolError(const std::string& msg) : Error("insufficient pool: " + msg) {}
};

struct LayerNotFoundError : Error {
    explicit LayerNotFoundError(const std::string& msg) : Error("layer not found: " + msg) {}
};

}  // namespace minidl
