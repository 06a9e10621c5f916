#pragma once

#include <stdexcept>
#include <string>

namespace cme {

/// Malformed model documents, partition strings or config files.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Semantically invalid input (undeclared species, rank condition, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure during time integration (NaN, Krylov breakdown).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace cme
