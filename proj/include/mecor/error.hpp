#pragma once

#include <stdexcept>
#include <string>

namespace mecor {

// Base for every failure raised by the library. The CLI maps ConfigError and
// DataError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class SingularDesignError : public Error {
public:
    using Error::Error;
};

class SeparationError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class NoEventsError : public Error {
public:
    using Error::Error;
};

class UnsupportedConfiguration : public Error {
public:
    using Error::Error;
};

class IdentifiabilityError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class BootstrapFailure : public Error {
public:
    using Error::Error;
};

class ImputationError : public Error {
public:
    using Error::Error;
};

class SamplerError : public Error {
public:
    using Error::Error;
};

}  // namespace mecor
