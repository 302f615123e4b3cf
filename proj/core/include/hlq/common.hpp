#pragma once

#include <stdexcept>
#include <string>

namespace hlq {

// Failure taxonomy for the whole toolkit. Callers (CLI, tests) react to the
// kind instead of string-matching messages.
enum class ErrorKind {
    config,       // invalid parameter or parameter combination
    data,         // malformed or non-finite input data
    calibration,  // unusable calibration set
    numeric,      // factorization or conditioning failure
    tuning,       // optimizer divergence
    io,           // file and container problems
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::config:      return "configuration error";
        case ErrorKind::data:        return "data error";
        case ErrorKind::calibration: return "calibration error";
        case ErrorKind::numeric:     return "numerical error";
        case ErrorKind::tuning:      return "tuning error";
        case ErrorKind::io:          return "io error";
    }
    return "error";
}

}  // namespace hlq
