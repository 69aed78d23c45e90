#include "cak/inferencer.hpp"

#include "cak/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace cak::infer {

spectral::MagnitudeSpectrogram process_magnitude(const spectral::MagnitudeSpectrogram& x, double c,
                                                 const EffectParams& effect, double norm_constant)
{
    if (!(norm_constant > 0.0) || !std::isfinite(norm_constant))
        throw Error(ErrorCode::InvalidArgument, "normalization constant must be positive");
    const double factor = gate_factor(c, effect);
    const double s = effect.scale_value();

    Grid normalized = x.mag;
    for (double& v : normalized.storage()) v /= norm_constant;
    const Grid detected = detect(normalized, effect);

    spectral::MagnitudeSpectrogram out{x.mag, x.config};
    auto& y = out.mag.storage();
    const auto& d = detected.storage();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i] + norm_constant * (d[i] * factor * s));
    return out;
}

audio::AudioClip stft_roundtrip(const audio::AudioClip& clip, const spectral::StftConfig& config)
{
    return spectral::istft(spectral::stft(audio::ensure_rate(clip, config.sample_rate), config));
}

EffectResult apply_effect(const audio::AudioClip& clip, double c, const train::Checkpoint& ckpt)
{
    if (!(c >= 0.0 && c <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "control value " + std::to_string(c) + " outside [0, 1]");

    const audio::AudioClip input = audio::ensure_rate(clip, ckpt.stft.sample_rate);
    const spectral::ComplexSpectrogram spec = spectral::stft(input, ckpt.stft);
    auto [mag, phase] = spectral::split(spec);
    const spectral::MagnitudeSpectrogram processed = process_magnitude(mag, c, ckpt.effect, ckpt.norm_constant);

    EffectResult result;
    for (std::size_t i = 0; i < mag.mag.size(); ++i)
        result.magnitude_delta_l1 += std::fabs(processed.mag.storage()[i] - mag.mag.storage()[i]);

    result.audio = spectral::istft(spectral::combine(processed, phase));
    result.audio.source_id = clip.source_id;
    std::size_t clamped = 0;
    for (float& v : result.audio.samples) {
        if (std::fabs(v) > kSampleSanityLimit) {
            v = std::clamp(v, -kSampleSanityLimit, kSampleSanityLimit);
            ++clamped;
        }
    }
    if (clamped > 0) {
        result.sanity_clamped = true;
        std::cerr << "warning: " << clamped << " output samples exceeded +-" << kSampleSanityLimit
                  << " and were clamped\n";
    }
    return result;
}

KernelReport inspect_kernel(const train::Checkpoint& ckpt)
{
    const EffectParams& e = ckpt.effect;
    KernelReport report;
    report.bias = e.bias_value();
    report.scale = e.scale_value();
    report.tau = e.tau;
    report.temperature = e.temperature;
    for (std::size_t r = 0; r < 3; ++r) {
        double band = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            report.weights[r][c] = e.weight(r, c);
            band += std::fabs(e.weight(r, c));
            report.ranked.push_back({r, c, e.weight(r, c)});
        }
        report.band_response[r] = band / 3.0;
    }
    std::stable_sort(report.ranked.begin(), report.ranked.end(),
                     [](const KernelCell& a, const KernelCell& b) { return a.value > b.value; });
    report.dominant = report.ranked.front();
    return report;
}

nlohmann::ordered_json kernel_report_json(const KernelReport& report)
{
    nlohmann::ordered_json j;
    j["schema_version"] = kKernelReportVersion;
    j["orientation"] = {{"rows", "frequency offset, row 0 = lower bin"},
                        {"cols", "time offset, col 0 = previous frame, col 2 = next frame"}};
    j["kernel"] = nlohmann::ordered_json::array();
    for (const auto& row : report.weights) j["kernel"].push_back(row);
    j["bias"] = report.bias;
    j["scale"] = report.scale;
    j["tau"] = report.tau;
    j["temperature"] = report.temperature;
    j["band_response"] = report.band_response;
    j["dominant"] = {{"row", report.dominant.row}, {"col", report.dominant.col}, {"value", report.dominant.value}};
    j["ranked"] = nlohmann::ordered_json::array();
    for (const auto& cell : report.ranked)
        j["ranked"].push_back({{"row", cell.row}, {"col", cell.col}, {"value", cell.value}});
    return j;
}

} // namespace cak::infer
