#include "cak/audio_io.hpp"

#include "cak/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>

namespace cak::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t le32(const std::uint8_t* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag)
{
    out.insert(out.end(), tag, tag + 4);
}

struct FmtChunk {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t bits = 0;
};

float decode_sample(const std::uint8_t* p, const FmtChunk& fmt)
{
    if (fmt.format == kFormatFloat) {
        float v;
        std::uint32_t bits = le32(p);
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    if (fmt.bits == 16) {
        auto v = static_cast<std::int16_t>(le16(p));
        return static_cast<float>(v) / 32768.0f;
    }
    // 24-bit: sign-extend into 32 bits
    std::int32_t v = static_cast<std::int32_t>((static_cast<std::uint32_t>(p[0]) << 8) |
                                               (static_cast<std::uint32_t>(p[1]) << 16) |
                                               (static_cast<std::uint32_t>(p[2]) << 24)) >>
                     8;
    return static_cast<float>(static_cast<double>(v) / 8388608.0);
}

} // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_id)
{
    const std::string who = source_id.empty() ? std::string("<memory>") : source_id;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw Error(ErrorCode::CorruptHeader, who + ": not a RIFF/WAVE file");

    std::optional<FmtChunk> fmt;
    std::span<const std::uint8_t> data;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* hdr = bytes.data() + pos;
        const std::uint32_t chunk_size = le32(hdr + 4);
        const std::size_t body = pos + 8;
        if (chunk_size > bytes.size() - body) {
            // Tolerate an over-long data chunk (common with streamed writers)
            // but nothing else.
            if (std::memcmp(hdr, "data", 4) == 0 && fmt) {
                data = bytes.subspan(body);
                have_data = true;
                break;
            }
            throw Error(ErrorCode::CorruptHeader, who + ": truncated chunk");
        }
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw Error(ErrorCode::CorruptHeader, who + ": short fmt chunk");
            const std::uint8_t* f = bytes.data() + body;
            FmtChunk c;
            c.format = le16(f);
            c.channels = le16(f + 2);
            c.sample_rate = le32(f + 4);
            c.bits = le16(f + 14);
            if (c.format == kFormatExtensible) {
                if (chunk_size < 40)
                    throw Error(ErrorCode::CorruptHeader, who + ": short extensible fmt chunk");
                c.format = le16(f + 24);
            }
            fmt = c;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = bytes.subspan(body, chunk_size);
            have_data = true;
        }
        pos = body + chunk_size + (chunk_size & 1u);
    }

    if (!fmt) throw Error(ErrorCode::CorruptHeader, who + ": missing fmt chunk");
    if (!have_data) throw Error(ErrorCode::CorruptHeader, who + ": missing data chunk");

    const bool pcm_ok = fmt->format == kFormatPcm && (fmt->bits == 16 || fmt->bits == 24);
    const bool float_ok = fmt->format == kFormatFloat && fmt->bits == 32;
    if (!pcm_ok && !float_ok)
        throw Error(ErrorCode::UnsupportedFormat,
                    who + ": unsupported codec (format " + std::to_string(fmt->format) + ", " +
                        std::to_string(fmt->bits) + " bit)");
    if (fmt->channels < 1 || fmt->channels > 2)
        throw Error(ErrorCode::UnsupportedFormat,
                    who + ": unsupported channel count " + std::to_string(fmt->channels));
    if (fmt->sample_rate == 0) throw Error(ErrorCode::CorruptHeader, who + ": zero sample rate");

    const std::size_t bytes_per_sample = fmt->bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * fmt->channels;
    const std::size_t frames = data.size() / frame_bytes;
    if (frames == 0) throw Error(ErrorCode::EmptyAudio, who + ": no audio frames");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(fmt->sample_rate);
    clip.source_id = source_id;
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const std::uint8_t* p = data.data() + i * frame_bytes;
        float v;
        if (fmt->channels == 1) {
            v = decode_sample(p, *fmt);
        } else {
            v = 0.5f * (decode_sample(p, *fmt) + decode_sample(p + bytes_per_sample, *fmt));
        }
        if (!std::isfinite(v)) v = 0.0f;
        clip.samples[i] = std::clamp(v, -1.0f, 1.0f);
    }
    return clip;
}

AudioClip read_wav(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_wav(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip)
{
    if (clip.empty()) throw Error(ErrorCode::EmptyAudio, "cannot write an empty clip");
    if (clip.sample_rate <= 0) throw Error(ErrorCode::InvalidArgument, "sample rate must be positive");

    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 4);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put32(out, 16);
    put16(out, kFormatFloat);
    put16(out, 1);
    put32(out, static_cast<std::uint32_t>(clip.sample_rate));
    put32(out, static_cast<std::uint32_t>(clip.sample_rate) * 4);
    put16(out, 4);
    put16(out, 32);
    put_tag(out, "data");
    put32(out, data_bytes);
    for (float s : clip.samples) {
        std::uint32_t bits;
        std::memcpy(&bits, &s, sizeof bits);
        put32(out, bits);
    }
    return out;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path)
{
    const auto bytes = encode_wav(clip);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": write failed");
}

AudioClip ensure_rate(const AudioClip& clip, int target_rate)
{
    if (target_rate <= 0) throw Error(ErrorCode::InvalidArgument, "target rate must be positive");
    if (clip.sample_rate == target_rate || clip.empty()) {
        AudioClip same = clip;
        if (clip.empty()) same.sample_rate = target_rate;
        return same;
    }

    const std::size_t n = clip.samples.size();
    const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
    // Integer arithmetic for the count so exact ratios do not lose a sample.
    const std::size_t m =
        static_cast<std::size_t>((static_cast<std::uint64_t>(n - 1) * static_cast<std::uint64_t>(target_rate)) /
                                 static_cast<std::uint64_t>(clip.sample_rate)) +
        1;

    AudioClip out;
    out.sample_rate = target_rate;
    out.source_id = clip.source_id;
    out.samples.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double pos = static_cast<double>(j) * ratio;
        auto i0 = static_cast<std::size_t>(pos);
        if (i0 >= n - 1) {
            out.samples[j] = clip.samples[n - 1];
            continue;
        }
        const double frac = pos - static_cast<double>(i0);
        const float a = clip.samples[i0];
        const float b = clip.samples[i0 + 1];
        out.samples[j] = frac == 0.0 ? a : static_cast<float>(a + (b - a) * frac);
    }
    return out;
}

} // namespace cak::audio
