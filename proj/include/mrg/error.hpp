#pragma once

#include <stdexcept>
#include <string>

namespace mrg {

// Error taxonomy. The code determines the CLI exit status and lets tests
// distinguish failure modes without string matching.
enum class ErrorCode {
    usage,              // bad flags / bad arguments        -> exit 1
    shape_mismatch,     // tensor or schema incompatibility -> exit 2
    bad_magic,          // container magic bytes wrong      -> exit 2
    truncated,          // container shorter than header says -> exit 2
    overlapping_offsets,// tensor payloads overlap or leave gaps -> exit 2
    non_finite,         // NaN/Inf in tensor data           -> exit 2
    bad_value,          // any other validation failure     -> exit 2
    io,                 // filesystem failure               -> exit 3
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const { return code_; }

    int exit_code() const {
        switch (code_) {
            case ErrorCode::usage: return 1;
            case ErrorCode::io:    return 3;
            default:               return 2;
        }
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

} // namespace mrg
