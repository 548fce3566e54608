#pragma once

#include <stdexcept>
#include <string>

namespace ave {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset ingestion / validation failures (malformed records, bad taxonomy, ...).
class DatasetError : public Error {
public:
    using Error::Error;
};

// Thrown when a projected call cost no longer fits the remaining budget.
// Callers are expected to terminate gracefully, not to retry.
class BudgetExhausted : public Error {
public:
    using Error::Error;
};

// Transport-level failure that survived the retry policy.
class TransportError : public Error {
public:
    using Error::Error;
};

// Backend answered, but the payload violates the wire contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Judge completion that does not follow the required output schema.
class JudgeParseError : public ProtocolError {
public:
    JudgeParseError(const std::string& message, std::string raw)
        : ProtocolError(message), raw_text(std::move(raw)) {}

    std::string raw_text;
};

// Match agent returned a pairing that is not one-to-one (after one retry).
class MatchProtocolError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class RefinementError : public Error {
public:
    using Error::Error;
};

class RewriteError : public Error {
public:
    using Error::Error;
};

class EmptyAggregate : public Error {
public:
    using Error::Error;
};

} // namespace ave
