// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mage {

/// Base class for every error raised by the library. Each subclass maps to a
/// failure category that callers (the CLI in particular) translate into an
/// exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad dimensions, zero budgets, out-of-range knobs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor or slab shapes that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A selection plan (or index list) that references invalid KV positions.
class PlanError : public Error {
public:
    using Error::Error;
};

class SelectionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. log of 0).
class DomainError : public Error {
public:
    using Error::Error;
};

class AllocationError : public Error {
public:
    using Error::Error;
};

/// Operation invoked in a state that does not permit it.
class StateError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

class ModelError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (empty token streams, bad training inputs).
class DataError : public Error {
public:
    using Error::Error;
};

/// Corrupt or truncated serialized input. `offset` is the byte (or line)
/// position where parsing failed.
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t offset)
        : DataError(what + " (at offset " + std::to_string(offset) + ")"), m_offset(offset) {}

    std::size_t offset() const noexcept { return m_offset; }

private:
    std::size_t m_offset;
};

}  // namespace mage
