#pragma once

#include <stdexcept>
#include <string>

namespace agcdro {

/// Bad argument or malformed input data (wrong shapes, non-finite values, bad files).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A SystemModel that violates its invariants.
class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Caller broke an operation contract (e.g. wrong input kind for a discretization).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// The weight box of an ambiguity set cannot contain a probability vector.
class InfeasibleAmbiguity : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure (divergence, NaN) inside an iterative routine.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace agcdro
