#pragma once

#include "cak/augan.hpp"
#include "cak/cak_core.hpp"
#include "cak/corpus.hpp"
#include "cak/diffmath.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cak::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainConfig {
    int epochs = 100;
    std::size_t batch_size = 8;
    std::size_t steps_per_epoch = 0;  ///< 0: ceil(corpus size / batch_size)
    int critic_steps = 1;             ///< critic updates per generator update
    augan::LossWeights weights;
    augan::CriticConfig critic;
    ad::AdamConfig effect_optimizer;
    ad::AdamConfig critic_optimizer;
    GateSchedule schedule;            ///< total_epochs is taken from `epochs`
    corpus::SamplingOptions sampling{0.5, false, 128, 128};
    std::uint64_t seed = 0;
    int checkpoint_every = 10;
    std::filesystem::path checkpoint_path;  ///< empty: no checkpoint files
    std::filesystem::path metrics_path;     ///< empty: no CSV

    void validate() const;
};

/// Everything needed to resume or apply a run. Layout on disk:
///   "CAKCKPT\0" | u32 version | u64 payload size | payload | SHA-256(all preceding bytes)
/// Integers and doubles are little-endian; tensors are u32 rank, u64 dims, f64 values.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    EffectParams effect;
    augan::CriticParams critic;
    ad::AdamState effect_optimizer;
    ad::AdamState critic_optimizer;
    int epoch = 0;
    std::uint64_t seed = 0;
    GateSchedule schedule;
    double norm_constant = 1.0;
    spectral::StftConfig stft;
};

struct EpochMetrics {
    int epoch = 0;
    double critic_loss = 0.0;
    double generator_loss = 0.0;
    double wasserstein = 0.0;
    double violation = 0.0;
    double temperature = 0.0;
    double scale = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> metrics;
};

struct TrainHooks {
    /// Invoked for every checkpoint the run produces (initial, periodic, final).
    std::function<void(const Checkpoint&)> on_checkpoint;
    /// Invoked before each optimization step; may inspect or perturb state.
    std::function<void(int epoch, std::size_t step, EffectParams&, augan::CriticParams&)> before_step;
};

/// Alternating critic / generator updates with the gate temperature set from
/// the schedule at the start of each epoch. The detector's gradients from the
/// critic loss are accumulated and applied together with the generator's by
/// the effect optimizer. A NonFinite failure is rethrown after the last good
/// checkpoint has been written.
TrainResult train(const corpus::Corpus& corpus, const TrainConfig& config, const TrainHooks& hooks = {});

/// Fresh run state for a corpus: seeded effect and critic plus optimizers.
Checkpoint initial_checkpoint(const corpus::Corpus& corpus, const TrainConfig& config);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws VersionMismatch or CorruptCheckpoint.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of raw bytes.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Columns: epoch,critic_loss,gen_loss,wasserstein,violation,temperature,scale
void export_metrics(std::span<const EpochMetrics> metrics, const std::filesystem::path& path);

} // namespace cak::train
