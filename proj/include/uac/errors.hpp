#pragma once

#include <stdexcept>
#include <string>

namespace uac {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input files or records (bad JSON, schema violations).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(what) {}
};

// Inputs that parse but violate a domain invariant or precondition.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
};

// Completion backend failures (transport, upstream rejection, missing logprobs).
class BackendError : public Error {
public:
    explicit BackendError(const std::string& what) : Error(what) {}
};

} // namespace uac
