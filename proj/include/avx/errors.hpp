#pragma once

#include <stdexcept>
#include <string>

namespace avx {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke an API precondition (non-scalar loss, missing gradient, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Sequence does not fit the configured position budget.
struct LengthError : std::length_error {
    using std::length_error::length_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A referenced input file or directory does not exist.
struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace avx
