#pragma once

#include <stdexcept>
#include <string>

namespace tpulse {

/// Broad failure class. The CLI maps these onto its exit codes.
enum class ErrorKind { usage, data, upstream };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Invalid arguments or missing prerequisites.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Malformed or missing input data.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Failures talking to (or interpreting) an LLM / embedding endpoint.
class UpstreamError : public Error {
public:
    explicit UpstreamError(const std::string& what) : Error(ErrorKind::upstream, what) {}
};

}  // namespace tpulse
