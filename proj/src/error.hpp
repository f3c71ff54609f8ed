#pragma once

#include <stdexcept>
#include <string>

namespace diglot {

enum class ErrorKind {
    invalid_argument,  // bad config, bad value, contract violation
    parse,             // malformed input file
    io,                // filesystem failure
    state,             // operation illegal in current object state
    runtime            // everything else (diverged loss, overflow, ...)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace diglot
