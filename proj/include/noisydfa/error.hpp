#pragma once

#include <stdexcept>
#include <string>

namespace noisydfa {

// Failure categories. The CLI maps each one onto a distinct exit code.
enum class ErrorKind {
    invalid_argument = 1,
    nonconvergence = 2,
    not_clusterable = 3,
    nondeterministic_transition = 4,
    inequivalent = 5,
    numerical_failure = 6,
    io = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& what) : Error(ErrorKind::numerical_failure, what) {}
};

class NotClusterable : public Error {
public:
    explicit NotClusterable(const std::string& what) : Error(ErrorKind::not_clusterable, what) {}
};

class NondeterministicTransition : public Error {
public:
    explicit NondeterministicTransition(const std::string& what)
        : Error(ErrorKind::nondeterministic_transition, what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(ErrorKind::io, what) {}
};

[[noreturn]] inline void fail_argument(const std::string& what) {
    throw Error(ErrorKind::invalid_argument, what);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) fail_argument(what);
}

} // namespace noisydfa
