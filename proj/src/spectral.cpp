#include "cak/spectral.hpp"

#include "cak/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

namespace cak::spectral {

namespace {

using cplx = std::complex<double>;

// The FFTW planner is not thread-safe; executing an existing plan on new
// arrays is. Plans are built once per size and kept for the process.
std::mutex planner_mutex;

struct RealPlans {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

struct FftwBuffer {
    explicit FftwBuffer(std::size_t n)
        : real(fftw_alloc_real(n)), spectrum(fftw_alloc_complex(n / 2 + 1))
    {
    }
    ~FftwBuffer()
    {
        fftw_free(real);
        fftw_free(spectrum);
    }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    double* real;
    fftw_complex* spectrum;
};

const RealPlans& real_plans(std::size_t n)
{
    static std::map<std::size_t, RealPlans> cache;
    const std::lock_guard lock(planner_mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
        FftwBuffer scratch(n);
        RealPlans plans;
        const int size = static_cast<int>(n);
        plans.forward = fftw_plan_dft_r2c_1d(size, scratch.real, scratch.spectrum, FFTW_ESTIMATE);
        plans.inverse = fftw_plan_dft_c2r_1d(size, scratch.spectrum, scratch.real, FFTW_ESTIMATE);
        if (!plans.forward || !plans.inverse) throw Error(ErrorCode::InvalidArgument, "FFTW planning failed");
        it = cache.emplace(n, plans).first;
    }
    return it->second;
}

} // namespace

void StftConfig::validate() const
{
    if (fft_size < 2 || !std::has_single_bit(fft_size))
        throw Error(ErrorCode::InvalidArgument, "fft_size must be a power of two");
    if (hop == 0 || hop > fft_size || fft_size % hop != 0)
        throw Error(ErrorCode::InvalidArgument, "hop must divide fft_size");
    if (sample_rate <= 0) throw Error(ErrorCode::InvalidArgument, "sample_rate must be positive");
}

std::vector<double> hann_window(std::size_t n)
{
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

void fft(std::vector<std::complex<double>>& data, bool inverse)
{
    if (data.empty()) throw Error(ErrorCode::InvalidArgument, "FFT of an empty buffer");
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        const std::lock_guard lock(planner_mutex);
        plan = fftw_plan_dft_1d(static_cast<int>(data.size()), buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                FFTW_ESTIMATE);
    }
    if (!plan) throw Error(ErrorCode::InvalidArgument, "FFTW planning failed");
    fftw_execute(plan);
    const std::lock_guard lock(planner_mutex);
    fftw_destroy_plan(plan);
}

ComplexSpectrogram stft(const audio::AudioClip& clip, const StftConfig& config)
{
    config.validate();
    if (clip.sample_rate != config.sample_rate)
        throw Error(ErrorCode::RateMismatch, "clip is " + std::to_string(clip.sample_rate) +
                                                 " Hz, STFT expects " + std::to_string(config.sample_rate) + " Hz");
    if (clip.size() < config.fft_size)
        throw Error(ErrorCode::TooShort, "clip has " + std::to_string(clip.size()) +
                                             " samples, need at least " + std::to_string(config.fft_size));

    const std::size_t n = config.fft_size;
    const std::size_t frames = config.frames_for(clip.size());
    const std::size_t bins = config.bins();
    const auto window = hann_window(n);
    const RealPlans& plans = real_plans(n);

    ComplexSpectrogram spec;
    spec.num_bins = bins;
    spec.num_frames = frames;
    spec.config = config;
    spec.bins.resize(bins * frames);

    FftwBuffer buf(n);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t start = t * config.hop;
        for (std::size_t i = 0; i < n; ++i) buf.real[i] = window[i] * static_cast<double>(clip.samples[start + i]);
        fftw_execute_dft_r2c(plans.forward, buf.real, buf.spectrum);
        for (std::size_t f = 0; f < bins; ++f) spec.at(f, t) = cplx(buf.spectrum[f][0], buf.spectrum[f][1]);
    }
    return spec;
}

audio::AudioClip istft(const ComplexSpectrogram& spec)
{
    const StftConfig& config = spec.config;
    config.validate();
    if (spec.num_bins != config.bins() || spec.bins.size() != spec.num_bins * spec.num_frames)
        throw Error(ErrorCode::ShapeMismatch, "spectrogram shape does not match its STFT config");

    audio::AudioClip out;
    out.sample_rate = config.sample_rate;
    if (spec.num_frames == 0) return out;

    const std::size_t n = config.fft_size;
    const std::size_t length = (spec.num_frames - 1) * config.hop + n;
    const auto window = hann_window(n);
    const RealPlans& plans = real_plans(n);

    std::vector<double> acc(length, 0.0);
    std::vector<double> norm(length, 0.0);
    FftwBuffer buf(n);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t t = 0; t < spec.num_frames; ++t) {
        for (std::size_t f = 0; f < spec.num_bins; ++f) {
            buf.spectrum[f][0] = spec.at(f, t).real();
            buf.spectrum[f][1] = spec.at(f, t).imag();
        }
        fftw_execute_dft_c2r(plans.inverse, buf.spectrum, buf.real);
        const std::size_t start = t * config.hop;
        for (std::size_t i = 0; i < n; ++i) {
            acc[start + i] += buf.real[i] * inv_n * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }

    // Floor the normalizer so the tapered edges are attenuated, not amplified.
    const double floor = kWindowFloor * *std::max_element(norm.begin(), norm.end());
    out.samples.resize(length);
    for (std::size_t i = 0; i < length; ++i) out.samples[i] = static_cast<float>(acc[i] / std::max(norm[i], floor));
    return out;
}

std::pair<MagnitudeSpectrogram, PhaseMap> split(const ComplexSpectrogram& spec)
{
    MagnitudeSpectrogram mag{Grid(spec.num_bins, spec.num_frames), spec.config};
    PhaseMap phase{Grid(spec.num_bins, spec.num_frames)};
    for (std::size_t i = 0; i < spec.bins.size(); ++i) {
        const cplx v = spec.bins[i];
        mag.mag.storage()[i] = std::abs(v);
        // atan2(+-0, x<0) would give +-pi; pin exact zero to phase 0.
        phase.phase.storage()[i] = (v.real() == 0.0 && v.imag() == 0.0) ? 0.0 : std::arg(v);
        if (phase.phase.storage()[i] == -std::numbers::pi) phase.phase.storage()[i] = std::numbers::pi;
    }
    return {std::move(mag), std::move(phase)};
}

ComplexSpectrogram combine(const MagnitudeSpectrogram& mag, const PhaseMap& phase)
{
    if (!mag.mag.same_shape(phase.phase))
        throw Error(ErrorCode::ShapeMismatch, "magnitude and phase grids differ in shape");
    ComplexSpectrogram spec;
    spec.num_bins = mag.mag.rows();
    spec.num_frames = mag.mag.cols();
    spec.config = mag.config;
    spec.bins.resize(mag.mag.size());
    for (std::size_t i = 0; i < spec.bins.size(); ++i)
        spec.bins[i] = std::polar(mag.mag.storage()[i], phase.phase.storage()[i]);
    return spec;
}

} // namespace cak::spectral
