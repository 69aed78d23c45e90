#pragma once

#include "cak/spectral.hpp"

#include <string_view>

namespace cak {

enum class PairKind { Identity, Transformation };

constexpr std::string_view pair_kind_name(PairKind kind) noexcept
{
    return kind == PairKind::Identity ? "identity" : "transformation";
}

/// (x_in, x_real, c). Identity pairs have x_in == x_real and c == 0;
/// transformation pairs take x_in from the lower-texture segment.
struct TrainingPair {
    spectral::MagnitudeSpectrogram x_in;
    spectral::MagnitudeSpectrogram x_real;
    double c = 0.0;
    PairKind kind = PairKind::Identity;
};

} // namespace cak
