#pragma once

#include "cak/audio_io.hpp"
#include "cak/grid.hpp"

#include <complex>
#include <cstddef>
#include <vector>

namespace cak::spectral {

struct StftConfig {
    std::size_t fft_size = 2048;
    std::size_t hop = 512;
    int sample_rate = 44100;

    std::size_t bins() const noexcept { return fft_size / 2 + 1; }
    /// Frames for a signal of n samples; the final partial frame is dropped.
    std::size_t frames_for(std::size_t n) const noexcept
    {
        return n < fft_size ? 0 : (n - fft_size) / hop + 1;
    }
    /// Throws InvalidArgument unless fft_size is a power of two and hop divides it.
    void validate() const;

    friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

/// F x T complex grid, row = frequency bin, column = frame.
struct ComplexSpectrogram {
    std::size_t num_bins = 0;
    std::size_t num_frames = 0;
    std::vector<std::complex<double>> bins;
    StftConfig config;

    std::complex<double>& at(std::size_t f, std::size_t t) noexcept { return bins[f * num_frames + t]; }
    const std::complex<double>& at(std::size_t f, std::size_t t) const noexcept
    {
        return bins[f * num_frames + t];
    }
};

struct MagnitudeSpectrogram {
    Grid mag;
    StftConfig config;
};

/// Phase in (-pi, pi], same layout as the magnitude grid.
struct PhaseMap {
    Grid phase;
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// In-place complex FFT of any length.
/// inverse=true computes the unnormalized inverse transform.
void fft(std::vector<std::complex<double>>& data, bool inverse);

/// Frame t covers samples [t*hop, t*hop + fft_size), Hann windowed.
/// Throws RateMismatch or TooShort.
ComplexSpectrogram stft(const audio::AudioClip& clip, const StftConfig& config);

/// Relative floor on the overlap-add normalizer.
inline constexpr double kWindowFloor = 1e-3;

/// Weighted overlap-add with a Hann synthesis window, normalized by the
/// accumulated squared window floored at kWindowFloor times its peak.
/// Output length is (T-1)*hop + fft_size.
audio::AudioClip istft(const ComplexSpectrogram& spec);

/// Magnitude and phase; a zero bin has phase 0.
std::pair<MagnitudeSpectrogram, PhaseMap> split(const ComplexSpectrogram& spec);

/// bins = mag * exp(i * phase). Throws ShapeMismatch.
ComplexSpectrogram combine(const MagnitudeSpectrogram& mag, const PhaseMap& phase);

} // namespace cak::spectral
