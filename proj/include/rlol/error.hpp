#pragma once

#include <stdexcept>
#include <string>

namespace rlol {

enum class ErrorKind {
    dimension,
    invalid_argument,
    non_finite,
    config,
    io,
    convergence,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind` is what the CLI reports in its error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
    if (!cond) fail(kind, message);
}

}  // namespace rlol
