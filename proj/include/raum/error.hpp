// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace raum {

/// Invalid hyperparameter, spec field or unsupported option.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor dimensions that do not agree for the requested operation.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Dataset content that cannot satisfy a protocol (e.g. an empty class).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff tape (second backward, non-scalar loss, ...).
class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace raum
