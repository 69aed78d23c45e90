#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cak {

enum class ErrorCode {
    UnsupportedFormat,
    CorruptHeader,
    EmptyAudio,
    IoFailure,
    RateMismatch,
    TooShort,
    ShapeMismatch,
    NonFinite,
    UnsupportedSecondOrder,
    EpochOutOfRange,
    EmptyCorpus,
    VersionMismatch,
    CorruptCheckpoint,
    InvalidArgument,
};

/// Machine-readable name, e.g. "UNSUPPORTED_FORMAT".
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// "ERR:<CODE>: message"
    std::string diagnostic() const;

private:
    ErrorCode code_;
};

} // namespace cak
