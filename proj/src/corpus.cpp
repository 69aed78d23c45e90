#include "cak/corpus.hpp"

#include "cak/audio_io.hpp"
#include "cak/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace cak::corpus {

namespace {

// Upper bound on magnitudes gathered for the percentile; larger corpora are
// sampled with a fixed stride.
constexpr std::size_t kPercentileSampleCap = 4'000'000;

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return s;
}

spectral::MagnitudeSpectrogram segment_magnitudes(const audio::AudioClip& clip, std::size_t offset,
                                                  std::size_t length, const spectral::StftConfig& config)
{
    audio::AudioClip seg;
    seg.sample_rate = clip.sample_rate;
    seg.source_id = clip.source_id;
    seg.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(offset + length));
    return spectral::split(spectral::stft(seg, config)).first;
}

SegmentSpectrogram store_normalized(const spectral::MagnitudeSpectrogram& m, double norm)
{
    SegmentSpectrogram s;
    s.bins = m.mag.rows();
    s.frames = m.mag.cols();
    s.mag.resize(m.mag.size());
    for (std::size_t i = 0; i < s.mag.size(); ++i) s.mag[i] = static_cast<float>(m.mag.storage()[i] / norm);
    return s;
}

std::size_t segment_length(double seconds, int rate)
{
    if (!(seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "segment length must be positive");
    return static_cast<std::size_t>(std::llround(seconds * rate));
}

spectral::MagnitudeSpectrogram crop(const SegmentSpectrogram& s, std::size_t f0, std::size_t t0, std::size_t bins,
                                    std::size_t frames, const spectral::StftConfig& config)
{
    spectral::MagnitudeSpectrogram m{Grid(bins, frames), config};
    for (std::size_t f = 0; f < bins; ++f)
        for (std::size_t t = 0; t < frames; ++t) m.mag(f, t) = static_cast<double>(s.at(f0 + f, t0 + t));
    return m;
}

} // namespace

double texture_g(const spectral::MagnitudeSpectrogram& mag)
{
    const Grid& m = mag.mag;
    if (m.cols() < 2 || m.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t t = 1; t < m.cols(); ++t) {
        double frame = 0.0;
        for (std::size_t f = 0; f < m.rows(); ++f) frame += std::fabs(m(f, t) - m(f, t - 1));
        total += frame / static_cast<double>(m.rows());
    }
    return total / static_cast<double>(m.cols() - 1);
}

std::vector<double> percentile_ranks(std::span<const double> values)
{
    const std::size_t n = values.size();
    std::vector<double> ranks(n, 0.0);
    if (n < 2) return ranks;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank / static_cast<double>(n - 1);
        i = j + 1;
    }
    return ranks;
}

double percentile(std::vector<double> values, double pct)
{
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

Corpus ingest(const std::filesystem::path& dir, const spectral::StftConfig& config, const IngestOptions& options)
{
    config.validate();
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        throw Error(ErrorCode::EmptyCorpus, dir.string() + ": not a directory");

    std::vector<std::filesystem::path> files;
    for (const auto& item : std::filesystem::directory_iterator(dir))
        if (item.is_regular_file() && lower(item.path().extension().string()) == ".wav") files.push_back(item.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::EmptyCorpus, dir.string() + ": no .wav files");

    CorpusIndex index;
    index.stft = config;
    index.segment_seconds = options.segment_seconds;
    index.segment_samples = segment_length(options.segment_seconds, config.sample_rate);
    const std::size_t seg_len = index.segment_samples;
    if (seg_len < config.fft_size)
        throw Error(ErrorCode::InvalidArgument, "segments are shorter than one STFT frame");

    std::vector<spectral::MagnitudeSpectrogram> raw;
    for (const auto& file : files) {
        const audio::AudioClip clip = audio::ensure_rate(audio::read_wav(file), config.sample_rate);
        const std::size_t count = clip.size() / seg_len;
        for (std::size_t k = 0; k < count; ++k) {
            CorpusEntry e;
            e.id = file.stem().string() + "#" + std::to_string(k);
            e.path = file.string();
            e.offset = k * seg_len;
            raw.push_back(segment_magnitudes(clip, e.offset, seg_len, config));
            e.g_raw = texture_g(raw.back());
            index.entries.push_back(std::move(e));
        }
    }
    if (index.entries.size() < 2)
        throw Error(ErrorCode::EmptyCorpus, dir.string() + ": need at least two " +
                                                std::to_string(options.segment_seconds) + " s segments, found " +
                                                std::to_string(index.entries.size()));

    std::vector<double> g_raw;
    for (const auto& e : index.entries) g_raw.push_back(e.g_raw);
    const auto ranks = percentile_ranks(g_raw);
    for (std::size_t i = 0; i < ranks.size(); ++i) index.entries[i].g = ranks[i];

    std::size_t total = 0;
    for (const auto& m : raw) total += m.mag.size();
    const std::size_t stride = std::max<std::size_t>(1, total / kPercentileSampleCap);
    std::vector<double> sample;
    sample.reserve(total / stride + 1);
    std::size_t counter = 0;
    for (const auto& m : raw)
        for (double v : m.mag.storage())
            if (counter++ % stride == 0) sample.push_back(v);
    const double norm = percentile(std::move(sample), options.norm_percentile);
    index.norm_constant = norm > 0.0 ? norm : 1.0;

    Corpus corpus;
    corpus.index = std::move(index);
    for (const auto& m : raw) corpus.segments.push_back(store_normalized(m, corpus.index.norm_constant));
    return corpus;
}

Corpus load(const CorpusIndex& index)
{
    index.stft.validate();
    if (index.entries.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus index has no entries");
    Corpus corpus;
    corpus.index = index;
    std::string cached_path;
    audio::AudioClip clip;
    for (const auto& e : index.entries) {
        if (e.path != cached_path) {
            clip = audio::ensure_rate(audio::read_wav(e.path), index.stft.sample_rate);
            cached_path = e.path;
        }
        if (e.offset + index.segment_samples > clip.size())
            throw Error(ErrorCode::TooShort, e.path + ": segment " + e.id + " extends past the end of the file");
        corpus.segments.push_back(store_normalized(
            segment_magnitudes(clip, e.offset, index.segment_samples, index.stft), index.norm_constant));
    }
    return corpus;
}

void write_index(const CorpusIndex& index, const std::filesystem::path& path)
{
    nlohmann::ordered_json j;
    j["format"] = "cak-corpus-index";
    j["version"] = index.version;
    j["stft"] = {{"fft_size", index.stft.fft_size}, {"hop", index.stft.hop}, {"sample_rate", index.stft.sample_rate}};
    j["segment_seconds"] = index.segment_seconds;
    j["segment_samples"] = index.segment_samples;
    j["norm_constant"] = index.norm_constant;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : index.entries)
        j["entries"].push_back({{"id", e.id}, {"path", e.path}, {"offset", e.offset}, {"g_raw", e.g_raw}, {"g", e.g}});
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": write failed");
}

CorpusIndex read_index(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptHeader, path.string() + ": invalid index JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "cak-corpus-index")
            throw Error(ErrorCode::CorruptHeader, path.string() + ": not a corpus index");
        CorpusIndex index;
        index.version = j.at("version").get<int>();
        if (index.version != kIndexVersion)
            throw Error(ErrorCode::VersionMismatch, path.string() + ": index version " +
                                                        std::to_string(index.version) + ", expected " +
                                                        std::to_string(kIndexVersion));
        index.stft.fft_size = j.at("stft").at("fft_size").get<std::size_t>();
        index.stft.hop = j.at("stft").at("hop").get<std::size_t>();
        index.stft.sample_rate = j.at("stft").at("sample_rate").get<int>();
        index.segment_seconds = j.at("segment_seconds").get<double>();
        index.segment_samples = j.at("segment_samples").get<std::size_t>();
        index.norm_constant = j.at("norm_constant").get<double>();
        for (const auto& e : j.at("entries"))
            index.entries.push_back(CorpusEntry{e.at("id").get<std::string>(), e.at("path").get<std::string>(),
                                                e.at("offset").get<std::size_t>(), e.at("g_raw").get<double>(),
                                                e.at("g").get<double>()});
        return index;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptHeader, path.string() + ": malformed index: " + e.what());
    }
}

std::vector<TrainingPair> sample_batch(const Corpus& corpus, std::size_t n, const SamplingOptions& options,
                                       std::mt19937_64& rng)
{
    const std::size_t count = corpus.segments.size();
    if (count == 0 || count != corpus.index.entries.size())
        throw Error(ErrorCode::EmptyCorpus, "cannot sample from an empty corpus");
    if (!(options.identity_fraction >= 0.0 && options.identity_fraction <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "identity_fraction must lie in [0, 1]");

    const auto n_identity =
        std::min(n, static_cast<std::size_t>(std::llround(options.identity_fraction * static_cast<double>(n))));
    std::vector<PairKind> kinds(n, PairKind::Transformation);
    std::fill_n(kinds.begin(), n_identity, PairKind::Identity);
    std::shuffle(kinds.begin(), kinds.end(), rng);
    if (count < 2 && n_identity < n)
        throw Error(ErrorCode::EmptyCorpus, "transformation pairs need at least two corpus entries");

    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<TrainingPair> batch;
    batch.reserve(n);
    for (PairKind kind : kinds) {
        std::size_t a = pick(rng);
        std::size_t b = a;
        if (kind == PairKind::Transformation) {
            // Redraw a few times to avoid same-entry and tied-g pairs.
            for (int attempt = 0; attempt < 64; ++attempt) {
                b = pick(rng);
                if (b != a && corpus.index.entries[a].g != corpus.index.entries[b].g) break;
            }
            while (b == a) b = pick(rng);
            if (corpus.index.entries[b].g < corpus.index.entries[a].g) std::swap(a, b);
        }
        const SegmentSpectrogram& lo = corpus.segments[a];
        const SegmentSpectrogram& hi = corpus.segments[b];
        const std::size_t bins_avail = std::min(lo.bins, hi.bins);
        const std::size_t frames_avail = std::min(lo.frames, hi.frames);
        const std::size_t bins = options.crop_bins == 0 ? bins_avail : std::min(options.crop_bins, bins_avail);
        const std::size_t frames =
            options.crop_frames == 0 ? frames_avail : std::min(options.crop_frames, frames_avail);
        const std::size_t f0 = std::uniform_int_distribution<std::size_t>(0, bins_avail - bins)(rng);
        const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, frames_avail - frames)(rng);

        TrainingPair pair;
        pair.kind = kind;
        pair.x_in = crop(lo, f0, t0, bins, frames, corpus.index.stft);
        if (kind == PairKind::Identity) {
            pair.x_real = pair.x_in;
            pair.c = 0.0;
        } else {
            pair.x_real = crop(hi, f0, t0, bins, frames, corpus.index.stft);
            pair.c = options.random_control ? 1.0 - unit(rng)
                                            : corpus.index.entries[b].g - corpus.index.entries[a].g;
        }
        batch.push_back(std::move(pair));
    }
    return batch;
}

std::vector<TrainingPair> sample_batch(const Corpus& corpus, std::size_t n, const SamplingOptions& options,
                                       std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sample_batch(corpus, n, options, rng);
}

} // namespace cak::corpus
