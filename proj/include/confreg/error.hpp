#pragma once

#include <stdexcept>
#include <string>

namespace confreg {

/// Bad input: malformed files, out-of-range parameters, violated preconditions.
/// The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation that is undefined for the given data (zero variance,
/// non-finite intermediate). The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace confreg
