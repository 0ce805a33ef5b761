#pragma once

#include <stdexcept>
#include <string>

namespace vmus {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precondition or configuration violation.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered in an input, a gradient or a parameter.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace vmus
