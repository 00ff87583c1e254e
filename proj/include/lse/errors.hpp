#pragma once

#include <stdexcept>
#include <string>

namespace lse {

// Error categories map onto CLI exit codes (config 2, data 3, runtime 4).
enum class ErrorKind {
    config,
    data,
    shape,
    index,
    length,
    numerical,
    io,
    usage,
    unsupported_format,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

const char* to_string(ErrorKind kind) noexcept;

// 2 = config, 3 = data, 4 = runtime/numerical.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace lse
