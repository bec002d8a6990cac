#pragma once

#include <stdexcept>
#include <string>

namespace eva {

// Extents disagree with an operation's contract (names both shapes in the message).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A value (count, radius, rate, ...) is outside the documented range.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke a stated precondition that is not a plain range problem.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Non-finite values where finite ones are required, or divergence.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input is structurally valid but geometrically unusable (zero radius, zero area).
struct DegenerateInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnsupportedFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace eva
