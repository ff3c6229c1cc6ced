#pragma once

#include <stdexcept>
#include <string>

namespace ionmag {

// Argument outside the region where an operation is defined (axial domain, time window).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// The derivative of the potential energy has no - to + sign change in the bracket.
class NoMinimumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// More than one potential-energy minimum inside the bracket; narrow it and retry.
class MultipleMinimaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotAMinimumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RankError : public FitError {
public:
    using FitError::FitError;
};

class ContrastCollapseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateVarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace ionmag
