#pragma once

#include <stdexcept>
#include <string>

namespace snmm {

// Stable error codes surfaced through exceptions, validation reports and
// the CLI's machine-readable error output.
enum class ErrorCode {
    UnbalancedPanel,
    ParseError,
    UnknownUnit,
    InvalidSize,
    StructureMissing,
    NotAbsorbing,
    IndexError,
    SpecParseError,
    LeakageError,
    ZeroConstraintViolation,
    IdentificationError,
    PositivityViolation,
    JacobianSingular,
    EmptySubgroup,
    SingletonStratum,
    DegenerateBlocks,
    NegativeEigenvalue,
    SolveFailed,
    ConfigError,
};

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnbalancedPanel: return "UnbalancedPanel";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::UnknownUnit: return "UnknownUnit";
        case ErrorCode::InvalidSize: return "InvalidSize";
        case ErrorCode::StructureMissing: return "StructureMissing";
        case ErrorCode::NotAbsorbing: return "NotAbsorbing";
        case ErrorCode::IndexError: return "IndexError";
        case ErrorCode::SpecParseError: return "SpecParseError";
        case ErrorCode::LeakageError: return "LeakageError";
        case ErrorCode::ZeroConstraintViolation: return "ZeroConstraintViolation";
        case ErrorCode::IdentificationError: return "IdentificationError";
        case ErrorCode::PositivityViolation: return "PositivityViolation";
        case ErrorCode::JacobianSingular: return "JacobianSingular";
        case ErrorCode::EmptySubgroup: return "EmptySubgroup";
        case ErrorCode::SingletonStratum: return "SingletonStratum";
        case ErrorCode::DegenerateBlocks: return "DegenerateBlocks";
        case ErrorCode::NegativeEigenvalue: return "NegativeEigenvalue";
        case ErrorCode::SolveFailed: return "SolveFailed";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

}  // namespace snmm
