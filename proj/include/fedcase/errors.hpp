#pragma once

#include <stdexcept>
#include <string>

namespace fedcase {

// Error categories map onto the CLI exit codes:
//   config -> 1, io -> 2, numeric/state -> 3
enum class ErrorCategory { config = 1, io = 2, numeric = 3, state = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}

    ErrorCategory category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ErrorCategory::config, msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ErrorCategory::io, msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(ErrorCategory::numeric, msg) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(ErrorCategory::state, msg) {}
};

// Dimension / layout mismatches (a kind of state error).
class ShapeError : public StateError {
public:
    explicit ShapeError(const std::string& msg) : StateError(msg) {}
};

} // namespace fedcase
