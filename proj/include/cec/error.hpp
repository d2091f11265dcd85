#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cec {

// Root of every error the library throws. Sentinel outcomes that are part of
// normal operation (no class tokens, unknown answers) are returned, not thrown.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Errors in user-supplied inputs or configuration. The CLI maps these to exit 1.
class InputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : InputError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public InputError {
public:
    explicit ValidationError(std::vector<std::string> issues)
        : InputError(join(issues)), issues_(std::move(issues)) {}
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    static std::string join(const std::vector<std::string>& issues) {
        std::string out = "validation failed";
        for (const auto& s : issues) out += "\n  " + s;
        return out;
    }
    std::vector<std::string> issues_;
};

// prompt_engine
class TemplateError : public InputError {
public:
    using InputError::InputError;
};
class MissingPlaceholder : public TemplateError {
public:
    using TemplateError::TemplateError;
};
class UnknownTemplateId : public TemplateError {
public:
    using TemplateError::TemplateError;
};
class ModeNotApplicable : public TemplateError {
public:
    using TemplateError::TemplateError;
};

// image_compose
class ZeroDimension : public InputError {
public:
    using InputError::InputError;
};
class DecodeError : public Error {
public:
    using Error::Error;
};

// lvlm_backend
class TransportError : public Error {
public:
    using Error::Error;
};
class CapabilityError : public InputError {
public:
    using InputError::InputError;
};
class BackendError : public Error {
public:
    BackendError(int status, std::string payload)
        : Error("backend returned HTTP " + std::to_string(status) + ": " + payload),
          status_(status), payload_(std::move(payload)) {}
    explicit BackendError(const std::string& what) : Error(what), status_(0) {}
    int status() const noexcept { return status_; }
    const std::string& payload() const noexcept { return payload_; }

private:
    int status_;
    std::string payload_;
};

// evidence_store
class ManifestNotFound : public Error {
public:
    using Error::Error;
};
class ManifestParseError : public InputError {
public:
    using InputError::InputError;
};
class QuotaExceeded : public Error {
public:
    using Error::Error;
};
class NoResults : public Error {
public:
    using Error::Error;
};

// verifier / dataset / evaluation
class AllQueriesFailed : public Error {
public:
    using Error::Error;
};
class EmptyVotes : public std::invalid_argument {
public:
    EmptyVotes() : std::invalid_argument("empty vote set") {}
};
class NoEligibleCandidate : public Error {
public:
    using Error::Error;
};
class MissingGold : public InputError {
public:
    using InputError::InputError;
};
class EmptyInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class RunFailed : public Error {
public:
    using Error::Error;
};

}  // namespace cec
