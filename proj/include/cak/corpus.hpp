#pragma once

#include "cak/spectral.hpp"
#include "cak/training_pair.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cak::corpus {

inline constexpr int kIndexVersion = 1;

struct CorpusEntry {
    std::string id;           ///< "<file stem>#<segment number>"
    std::string path;
    std::size_t offset = 0;   ///< first sample of the segment (at the STFT rate)
    double g_raw = 0.0;       ///< mean spectral flux of the un-normalized magnitudes
    double g = 0.0;           ///< percentile rank of g_raw in [0, 1]

    friend bool operator==(const CorpusEntry&, const CorpusEntry&) = default;
};

struct CorpusIndex {
    int version = kIndexVersion;
    spectral::StftConfig stft;
    double segment_seconds = 15.0;
    std::size_t segment_samples = 661500;
    double norm_constant = 1.0;  ///< magnitudes are divided by this
    std::vector<CorpusEntry> entries;

    friend bool operator==(const CorpusIndex&, const CorpusIndex&) = default;
};

struct IngestOptions {
    double segment_seconds = 15.0;
    double norm_percentile = 99.5;
};

/// Normalized magnitudes of one segment, stored in single precision.
struct SegmentSpectrogram {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<float> mag;

    float at(std::size_t f, std::size_t t) const { return mag[f * frames + t]; }
};

struct Corpus {
    CorpusIndex index;
    std::vector<SegmentSpectrogram> segments;  ///< parallel to index.entries
};

/// Mean spectral flux: average over t >= 1 of ||mag[:,t] - mag[:,t-1]||_1 / F.
/// Zero for fewer than two frames.
double texture_g(const spectral::MagnitudeSpectrogram& mag);

/// rank / (n - 1) with tied values sharing their average rank.
std::vector<double> percentile_ranks(std::span<const double> values);

/// Linear-interpolated percentile (0..100) of the values.
double percentile(std::vector<double> values, double pct);

/// Reads every *.wav in `dir` (sorted by name), cuts consecutive
/// non-overlapping segments of segment_seconds (shorter tails are dropped),
/// and computes g and the corpus normalization constant (the norm_percentile
/// magnitude over all cells). Throws EmptyCorpus when fewer than two segments
/// result; audio errors carry the file path.
Corpus ingest(const std::filesystem::path& dir, const spectral::StftConfig& config, const IngestOptions& options = {});

/// Re-reads the audio referenced by an index and rebuilds the spectrograms.
Corpus load(const CorpusIndex& index);

void write_index(const CorpusIndex& index, const std::filesystem::path& path);
CorpusIndex read_index(const std::filesystem::path& path);

struct SamplingOptions {
    double identity_fraction = 0.5;
    /// Transformation pairs draw c ~ U(0, 1] instead of g(high) - g(low).
    bool random_control = false;
    /// Random crop applied at the same position to both pair members.
    /// Zero means the full extent.
    std::size_t crop_bins = 0;
    std::size_t crop_frames = 0;
};

/// round(identity_fraction * n) identity pairs (x, x, 0) and transformation
/// pairs (x_low, x_high, g_high - g_low) from two distinct entries, in a
/// shuffled order. Deterministic for a given generator state.
std::vector<TrainingPair> sample_batch(const Corpus& corpus, std::size_t n, const SamplingOptions& options,
                                       std::mt19937_64& rng);
std::vector<TrainingPair> sample_batch(const Corpus& corpus, std::size_t n, const SamplingOptions& options,
                                       std::uint64_t seed);

} // namespace cak::corpus
