#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace clarify {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Caller passed an argument violating a precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// An index or turn number outside the defined range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Structured text failed to parse; carries the offending fragment.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string fragment)
        : Error(what), fragment_(std::move(fragment)) {}
    const std::string& fragment() const { return fragment_; }

private:
    std::string fragment_;
};

/// A domain invariant does not hold on a constructed value.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Scripted backend ran out of replies or is missing a key.
class ScriptError : public Error {
public:
    using Error::Error;
};

/// Transient transport failure that survived all retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Non-retryable HTTP failure (4xx).
class PermanentHttpError : public Error {
public:
    PermanentHttpError(const std::string& what, int status)
        : Error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

/// Remote service replied with a malformed or inconsistent payload.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// All generation attempts failed to parse; carries every raw reply.
class ExhaustionError : public Error {
public:
    ExhaustionError(const std::string& what, std::vector<std::string> attempts)
        : Error(what), attempts_(std::move(attempts)) {}
    const std::vector<std::string>& attempts() const { return attempts_; }

private:
    std::vector<std::string> attempts_;
};

/// Dataset file rejected at load; carries offending identifiers.
class IngestionError : public Error {
public:
    explicit IngestionError(const std::string& what,
                            std::vector<std::string> offenders = {})
        : Error(what), offenders_(std::move(offenders)) {}
    const std::vector<std::string>& offenders() const { return offenders_; }

private:
    std::vector<std::string> offenders_;
};

/// A pipeline stage broke its contract (e.g. reranker not a permutation).
class PipelineError : public Error {
public:
    using Error::Error;
};

}  // namespace clarify
