#include "lse/errors.hpp"

namespace lse {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::shape: return "shape";
        case ErrorKind::index: return "index";
        case ErrorKind::length: return "length";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::io: return "io";
        case ErrorKind::usage: return "usage";
        case ErrorKind::unsupported_format: return "unsupported-format";
    }
    return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::config:
        case ErrorKind::usage: return 2;
        case ErrorKind::data:
        case ErrorKind::io:
        case ErrorKind::unsupported_format:
        case ErrorKind::length: return 3;
        case ErrorKind::shape:
        case ErrorKind::index:
        case ErrorKind::numerical: return 4;
    }
    return 4;
}

}  // namespace lse
