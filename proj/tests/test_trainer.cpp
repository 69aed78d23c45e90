#include "cak/audio_io.hpp"
#include "cak/error.hpp"
#include "cak/trainer.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

using namespace cak;
using namespace cak::train;
using Catch::Matchers::WithinAbs;

namespace {

/// Two tone and two burst segments of one second each.
const corpus::Corpus& toy_corpus()
{
    static const corpus::Corpus corpus = [] {
        testing::TempDir dir;
        audio::write_wav(testing::sine(220.0, 2.0), dir / "tone.wav");
        audio::write_wav(testing::noise_bursts(2.0, 3), dir / "burst.wav");
        return corpus::ingest(dir.path(), {}, {1.0, 99.5});
    }();
    return corpus;
}

TrainConfig toy_config()
{
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.critic = augan::CriticConfig{{4, 8}, 8, 0.2};
    cfg.sampling = corpus::SamplingOptions{0.5, false, 16, 16};
    cfg.seed = 77;
    cfg.checkpoint_every = 1;
    return cfg;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> read_lines(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidArgument;
}

void require_identity(const EffectParams& effect)
{
    std::mt19937_64 rng(1);
    const spectral::MagnitudeSpectrogram x{testing::random_grid(12, 10, rng, 0.0, 2.0), {}};
    const auto y = cak_apply(x, 0.0, effect);
    CHECK(y.mag.storage() == x.mag.storage());
}

} // namespace

TEST_CASE("config validation", "[trainer]")
{
    TrainConfig cfg = toy_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.epochs = 0;
    CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
    cfg = toy_config();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = toy_config();
    cfg.weights.gp = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK(TrainConfig{}.epochs == 100);
    CHECK(TrainConfig{}.batch_size == 8);
    CHECK(TrainConfig{}.sampling.identity_fraction == 0.5);
}

TEST_CASE("checkpoint round trip", "[trainer][checkpoint]")
{
    Checkpoint ck = initial_checkpoint(toy_corpus(), toy_config());
    ck.epoch = 5;
    ck.effect_optimizer.step = 9;
    ck.effect_optimizer.m[0].data[3] = -0.125;
    ck.critic.head_b.data[0] = std::numeric_limits<double>::denorm_min();
    const auto bytes = serialize_checkpoint(ck);

    const Checkpoint back = parse_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.effect == ck.effect);
    CHECK(back.critic == ck.critic);
    CHECK(back.epoch == 5);
    CHECK(back.seed == 77);
    CHECK(back.schedule == ck.schedule);
    CHECK(back.stft == ck.stft);
    CHECK(back.norm_constant == ck.norm_constant);
    CHECK(back.effect_optimizer.step == 9);
    CHECK(back.effect_optimizer.m[0].data[3] == -0.125);
    CHECK(back.critic.head_b.data[0] == std::numeric_limits<double>::denorm_min());

    testing::TempDir dir;
    save_checkpoint(ck, dir / "a.ckpt");
    CHECK(read_bytes(dir / "a.ckpt") == bytes);
    CHECK(serialize_checkpoint(load_checkpoint(dir / "a.ckpt")) == bytes);
    CHECK(sha256_hex(bytes).size() == 64);
}

TEST_CASE("checkpoint corruption", "[trainer][checkpoint]")
{
    const auto bytes = serialize_checkpoint(initial_checkpoint(toy_corpus(), toy_config()));

    auto version = bytes;
    version[8] ^= 0x02;
    CHECK(code_of([&] { parse_checkpoint(version); }) == ErrorCode::VersionMismatch);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 10);
    CHECK(code_of([&] { parse_checkpoint(truncated); }) == ErrorCode::CorruptCheckpoint);
    CHECK(code_of([&] { parse_checkpoint(std::span(bytes).first(12)); }) == ErrorCode::CorruptCheckpoint);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK(code_of([&] { parse_checkpoint(flipped); }) == ErrorCode::CorruptCheckpoint);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK(code_of([&] { parse_checkpoint(magic); }) == ErrorCode::CorruptCheckpoint);

    CHECK(code_of([] { serialize_checkpoint(Checkpoint{}); }) == ErrorCode::InvalidArgument);

    testing::TempDir dir;
    CHECK(code_of([&] { load_checkpoint(dir / "missing.ckpt"); }) == ErrorCode::IoFailure);
    CHECK(code_of([&] { save_checkpoint(initial_checkpoint(toy_corpus(), toy_config()), dir / "no" / "x.ckpt"); }) ==
          ErrorCode::IoFailure);
}

TEST_CASE("sha256 known digest", "[trainer]")
{
    const std::string abc = "abc";
    const std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
    CHECK(sha256_hex(bytes) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("one epoch smoke run", "[trainer]")
{
    testing::TempDir dir;
    TrainConfig cfg = toy_config();
    cfg.epochs = 1;
    cfg.checkpoint_path = dir / "run.ckpt";
    cfg.metrics_path = dir / "metrics.csv";
    const TrainResult r = train::train(toy_corpus(), cfg);
    REQUIRE(r.metrics.size() == 1);
    CHECK(r.metrics[0].epoch == 1);
    CHECK(r.checkpoint.epoch == 1);
    const Checkpoint loaded = load_checkpoint(cfg.checkpoint_path);
    CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(r.checkpoint));
    const auto lines = read_lines(cfg.metrics_path);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0] == "epoch,critic_loss,gen_loss,wasserstein,violation,temperature,scale");
}

TEST_CASE("multi-epoch run", "[trainer]")
{
    testing::TempDir dir;
    TrainConfig cfg = toy_config();
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;
    cfg.metrics_path = dir / "metrics.csv";

    std::vector<int> checkpoint_epochs;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const Checkpoint& ck) {
        checkpoint_epochs.push_back(ck.epoch);
        require_identity(ck.effect);
    };
    const EffectParams initial = initial_checkpoint(toy_corpus(), cfg).effect;
    const TrainResult r = train::train(toy_corpus(), cfg, hooks);

    CHECK(checkpoint_epochs == std::vector<int>{0, 2, 4});
    REQUIRE(r.metrics.size() == 4);
    for (int e = 0; e < 4; ++e) {
        const auto& m = r.metrics[static_cast<std::size_t>(e)];
        CHECK(m.epoch == e + 1);
        CHECK_THAT(m.temperature, WithinAbs(2.0 + 6.0 * e, 1e-12));
        CHECK(m.violation >= 0.0);
        for (double v : {m.critic_loss, m.generator_loss, m.wasserstein, m.violation, m.scale})
            CHECK(std::isfinite(v));
    }
    CHECK(r.checkpoint.effect.tau == initial.tau);
    CHECK_FALSE(r.checkpoint.effect.kernel == initial.kernel);
    CHECK(r.checkpoint.effect.temperature == 20.0);
    CHECK(r.checkpoint.effect_optimizer.step == 8);
    CHECK(r.checkpoint.critic_optimizer.step == 8);

    const auto lines = read_lines(cfg.metrics_path);
    REQUIRE(lines.size() == 5);
    std::vector<double> temps;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::stringstream row(lines[i]);
        std::string cell;
        std::vector<double> cells;
        while (std::getline(row, cell, ',')) cells.push_back(std::stod(cell));
        REQUIRE(cells.size() == 7);
        CHECK(cells[4] >= 0.0);
        temps.push_back(cells[5]);
    }
    CHECK(temps.front() == 2.0);
    CHECK(temps.back() == 20.0);
}

TEST_CASE("training is deterministic", "[trainer]")
{
    const TrainResult a = train::train(toy_corpus(), toy_config());
    const TrainResult b = train::train(toy_corpus(), toy_config());
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].critic_loss == b.metrics[i].critic_loss);
        CHECK(a.metrics[i].generator_loss == b.metrics[i].generator_loss);
        CHECK(a.metrics[i].violation == b.metrics[i].violation);
        CHECK(a.metrics[i].scale == b.metrics[i].scale);
    }
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));

    TrainConfig other = toy_config();
    other.seed = 78;
    CHECK(serialize_checkpoint(train::train(toy_corpus(), other).checkpoint) != serialize_checkpoint(a.checkpoint));
}

TEST_CASE("non-finite state aborts with the last good checkpoint", "[trainer]")
{
    testing::TempDir dir;
    TrainConfig cfg = toy_config();
    cfg.checkpoint_path = dir / "run.ckpt";
    TrainHooks hooks;
    hooks.before_step = [](int epoch, std::size_t step, EffectParams& effect, augan::CriticParams&) {
        if (epoch == 2 && step == 1) effect.kernel.data[4] = std::numeric_limits<double>::quiet_NaN();
    };
    CHECK(code_of([&] { train::train(toy_corpus(), cfg, hooks); }) == ErrorCode::NonFinite);
    const Checkpoint last = load_checkpoint(cfg.checkpoint_path);
    CHECK(last.epoch == 1);
    for (const ad::Tensor* t : last.effect.learnable()) CHECK(t->all_finite());
    require_identity(last.effect);
}

TEST_CASE("metrics export", "[trainer]")
{
    testing::TempDir dir;
    std::vector<EpochMetrics> rows(100);
    for (int i = 0; i < 100; ++i) rows[static_cast<std::size_t>(i)] = {i + 1, 0.5, -0.25, 0.1, 0.3, 2.0, 1.0};
    export_metrics(rows, dir / "m.csv");
    CHECK(read_lines(dir / "m.csv").size() == 101);
    CHECK(read_lines(dir / "m.csv")[1] == "1,0.5,-0.25,0.10000000000000001,0.29999999999999999,2,1");
    CHECK(code_of([&] { export_metrics(rows, dir / "missing" / "m.csv"); }) == ErrorCode::IoFailure);
}
