#pragma once

#include <stdexcept>
#include <string>

namespace tess {

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violated a documented precondition (bad shape, too few samples...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed external data: CSV, JSON-lines, LLM responses, checkpoints.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Network or backend failure, after retries were exhausted.
class BackendError : public Error {
public:
    BackendError(const std::string& what, int attempts)
      : Error(what), m_attempts(attempts)
    { }

    int attempts() const { return m_attempts; }

private:
    int m_attempts;
};

/// The backend cannot serve the requested scoring mode.
class ModeUnsupported : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw InvalidArgument(msg);
}

} // namespace detail
} // namespace tess
