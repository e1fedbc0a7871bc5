#pragma once

#include <stdexcept>
#include <string>

namespace diffgepci {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Arguments outside their documented range (schedule endpoints, quantiles, weights, config fields).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class StepOutOfRange : public Error {
public:
    using Error::Error;
};

class IndexOutOfBounds : public Error {
public:
    using Error::Error;
};

/// Non-finite samples during synthesis, divergence during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace diffgepci
