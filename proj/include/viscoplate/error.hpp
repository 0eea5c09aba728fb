#pragma once

#include <stdexcept>
#include <string>

namespace viscoplate {

/// Malformed or out-of-contract caller input (empty grids, bad config, points outside the domain).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function (conjugate, envelope, modulus range).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A hypothesis the model requires does not hold (e.g. k >= k0).
class HypothesisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gram assembly produced a matrix that is not numerically SPD.
class AssemblyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The time integrator produced non-finite values or Newton failed for good.
class DivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace viscoplate
