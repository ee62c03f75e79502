#pragma once

#include <stdexcept>
#include <string>

namespace metacal {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid run configuration or invalid input data (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Corpus file violates the line schema or a Question invariant.
class CorpusError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// A stage was requested whose upstream artifacts are missing or do not
// match the run manifest (CLI exit code 3).
class DependencyError : public Error {
public:
    using Error::Error;
};

// Anything that went wrong talking to an answer backend (CLI exit code 4).
class BackendError : public Error {
public:
    using Error::Error;
};

// Transport-level failure that survived the retry budget.
class TransportError : public BackendError {
public:
    using BackendError::BackendError;
};

// Completion did not validate against its schema after bounded re-asks.
// Carries the offending raw payload.
class ParseError : public BackendError {
public:
    ParseError(const std::string& message, std::string raw_text)
        : BackendError(message), raw_text_(std::move(raw_text)) {}
    const std::string& raw_text() const { return raw_text_; }

private:
    std::string raw_text_;
};

// Raw answer string has no extractable canonical form for its format.
class NormalizationError : public Error {
public:
    using Error::Error;
};

// A metric has no defined value on the given inputs, e.g. AUC with no
// incorrect answers (CLI exit code 5). Never mapped to a sentinel value.
class MetricUndefinedError : public Error {
public:
    using Error::Error;
};

}  // namespace metacal
