#pragma once

#include "cak/audio_io.hpp"
#include "cak/spectral.hpp"
#include "cak/trainer.hpp"

#include <json.hpp>

#include <array>
#include <vector>

namespace cak::infer {

inline constexpr int kKernelReportVersion = 1;
/// Output samples beyond this magnitude are clamped with a warning.
inline constexpr float kSampleSanityLimit = 4.0f;

struct EffectResult {
    audio::AudioClip audio;
    double magnitude_delta_l1 = 0.0;  ///< sum over cells of |processed - input| magnitude
    bool sanity_clamped = false;
};

/// out = max(0, x + k * D(x / k) * c * sigma(c) * s), k the corpus
/// normalization constant. Equivalent to normalize -> effect -> clamp ->
/// denormalize, arranged so that c = 0 returns x bit-exactly.
spectral::MagnitudeSpectrogram process_magnitude(const spectral::MagnitudeSpectrogram& x, double c,
                                                 const EffectParams& effect, double norm_constant);

/// ensure_rate -> stft -> split -> process_magnitude -> combine with the input
/// phase -> istft. The output is at the checkpoint's STFT rate.
/// Throws InvalidArgument for c outside [0, 1] and TooShort for clips
/// shorter than one frame.
EffectResult apply_effect(const audio::AudioClip& clip, double c, const train::Checkpoint& ckpt);

/// The reference bypass path: istft(stft(x)) at the checkpoint's settings.
audio::AudioClip stft_roundtrip(const audio::AudioClip& clip, const spectral::StftConfig& config);

struct KernelCell {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

/// Rows are frequency offsets (row 0 = lower bin), columns are time offsets
/// (column 0 = previous frame, column 2 = next frame).
struct KernelReport {
    std::array<std::array<double, 3>, 3> weights{};
    double bias = 0.0;
    double scale = 0.0;
    double tau = 0.0;
    double temperature = 0.0;
    std::array<double, 3> band_response{};  ///< mean |w| per kernel row
    KernelCell dominant;                    ///< largest weight
    std::vector<KernelCell> ranked;         ///< all cells, weight descending
};

KernelReport inspect_kernel(const train::Checkpoint& ckpt);

/// Versioned JSON with a fixed field order.
nlohmann::ordered_json kernel_report_json(const KernelReport& report);

} // namespace cak::infer
