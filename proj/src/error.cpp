#include "cak/error.hpp"

namespace cak {

std::string_view error_code_name(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::UnsupportedFormat: return "UNSUPPORTED_FORMAT";
    case ErrorCode::CorruptHeader: return "CORRUPT_HEADER";
    case ErrorCode::EmptyAudio: return "EMPTY_AUDIO";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::RateMismatch: return "RATE_MISMATCH";
    case ErrorCode::TooShort: return "TOO_SHORT";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::UnsupportedSecondOrder: return "UNSUPPORTED_SECOND_ORDER";
    case ErrorCode::EpochOutOfRange: return "EPOCH_OUT_OF_RANGE";
    case ErrorCode::EmptyCorpus: return "EMPTY_CORPUS";
    case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::CorruptCheckpoint: return "CORRUPT_CHECKPOINT";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    }
    return "UNKNOWN";
}

std::string Error::diagnostic() const
{
    std::string out = "ERR:";
    out += error_code_name(code_);
    out += ": ";
    out += what();
    return out;
}

} // namespace cak
