#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cak::audio {

/// Mono sample buffer. Samples decoded from files are in [-1, 1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 44100;
    std::string source_id;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    double duration_seconds() const noexcept
    {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// Accepts RIFF/WAVE with PCM 16/24-bit integer or 32-bit IEEE float samples
// (plain or WAVE_FORMAT_EXTENSIBLE), one or two channels. Stereo is downmixed
// by channel mean. Throws cak::Error (UnsupportedFormat, CorruptHeader,
// EmptyAudio, IoFailure).
AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_id = {});
AudioClip read_wav(const std::filesystem::path& path);

/// Always emits 32-bit float mono, so decode(encode(c)) is bit-exact.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

/// Linear resampling. Returns the clip unchanged when the rate already
/// matches. Otherwise produces floor((N - 1) * target / rate) + 1 samples,
/// sample j taken at source position j * rate / target (so 22050 -> 44100
/// maps N samples to 2N - 1).
AudioClip ensure_rate(const AudioClip& clip, int target_rate);

} // namespace cak::audio
