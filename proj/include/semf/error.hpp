#pragma once

#include <stdexcept>
#include <string>

namespace semf {

enum class ErrorKind {
    Parse,
    Schema,
    Sizing,
    Shape,
    Numeric,
    Contract,
    Format,
    Io,
    Usage,
    Training,
    Imputation,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Sizing: return "sizing";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Contract: return "contract";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Training: return "training";
        case ErrorKind::Imputation: return "imputation";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace semf
