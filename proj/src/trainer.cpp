#include "cak/trainer.hpp"

#include "cak/error.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <utility>

namespace cak::train {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'K', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8;
constexpr std::size_t kDigestSize = SHA256_DIGEST_LENGTH;

class Writer {
public:
    void u32(std::uint32_t v) { raw(v, 4); }
    void u64(std::uint64_t v) { raw(v, 8); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void tensor(const ad::Tensor& t)
    {
        u32(static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) u64(d);
        for (double v : t.data) f64(v);
    }
    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    void raw(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
    std::uint64_t u64() { return raw(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    ad::Tensor tensor()
    {
        const std::uint32_t rank = u32();
        if (rank > 8) corrupt("tensor rank");
        ad::Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(u64());
            if (d > (std::size_t{1} << 32)) corrupt("tensor extent");
            n *= d;
        }
        if (n * 8 > remaining()) corrupt("tensor data");
        std::vector<double> data(n);
        for (double& v : data) v = f64();
        return ad::Tensor(std::move(shape), std::move(data));
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    [[noreturn]] static void corrupt(const char* what)
    {
        throw Error(ErrorCode::CorruptCheckpoint, std::string("checkpoint payload malformed: ") + what);
    }

private:
    std::uint64_t raw(int n)
    {
        if (remaining() < static_cast<std::size_t>(n)) corrupt("unexpected end");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void write_adam(Writer& w, const ad::AdamState& s)
{
    w.f64(s.config.lr);
    w.f64(s.config.beta1);
    w.f64(s.config.beta2);
    w.f64(s.config.eps);
    w.u64(s.step);
    w.u32(static_cast<std::uint32_t>(s.m.size()));
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        w.tensor(s.m[i]);
        w.tensor(s.v[i]);
    }
}

ad::AdamState read_adam(Reader& r)
{
    ad::AdamState s;
    s.config.lr = r.f64();
    s.config.beta1 = r.f64();
    s.config.beta2 = r.f64();
    s.config.eps = r.f64();
    s.step = r.u64();
    const std::uint32_t count = r.u32();
    if (count > 1024) Reader::corrupt("optimizer slot count");
    for (std::uint32_t i = 0; i < count; ++i) {
        s.m.push_back(r.tensor());
        s.v.push_back(r.tensor());
    }
    return s;
}

std::array<std::uint8_t, kDigestSize> digest(std::span<const std::uint8_t> bytes)
{
    std::array<std::uint8_t, kDigestSize> out{};
    SHA256(bytes.data(), bytes.size(), out.data());
    return out;
}

std::vector<ad::Tensor> effect_zero_grads(const EffectParams& effect)
{
    std::vector<ad::Tensor> g;
    for (const ad::Tensor* t : effect.learnable()) g.emplace_back(t->shape, 0.0);
    return g;
}

} // namespace

void TrainConfig::validate() const
{
    if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
    if (critic_steps < 1) throw Error(ErrorCode::InvalidArgument, "critic_steps must be >= 1");
    if (checkpoint_every < 1) throw Error(ErrorCode::InvalidArgument, "checkpoint_every must be >= 1");
    weights.validate();
    GateSchedule s = schedule;
    s.total_epochs = epochs;
    s.validate();
}

Checkpoint initial_checkpoint(const corpus::Corpus& corpus, const TrainConfig& config)
{
    std::mt19937_64 seeder(config.seed);
    Checkpoint ckpt;
    ckpt.seed = config.seed;
    ckpt.effect = init_params(seeder());
    ckpt.critic = augan::init_critic(config.critic, seeder());
    ckpt.schedule = config.schedule;
    ckpt.schedule.total_epochs = config.epochs;
    ckpt.effect.temperature = ckpt.schedule.temp_start;
    ckpt.effect_optimizer = ad::AdamState::for_params(std::as_const(ckpt.effect).learnable(), config.effect_optimizer);
    const auto critic_tensors = ckpt.critic.tensors();
    ckpt.critic_optimizer = ad::AdamState::for_params(
        std::vector<const ad::Tensor*>(critic_tensors.begin(), critic_tensors.end()), config.critic_optimizer);
    ckpt.norm_constant = corpus.index.norm_constant;
    ckpt.stft = corpus.index.stft;
    return ckpt;
}

TrainResult train(const corpus::Corpus& corpus, const TrainConfig& config, const TrainHooks& hooks)
{
    config.validate();
    if (corpus.segments.empty()) throw Error(ErrorCode::EmptyCorpus, "training needs a non-empty corpus");

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    ckpt = initial_checkpoint(corpus, config);

    // Stream for batches and interpolation coefficients, separate from the
    // parameter-init seeds.
    std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t steps = config.steps_per_epoch > 0
                                  ? config.steps_per_epoch
                                  : (corpus.segments.size() + config.batch_size - 1) / config.batch_size;

    auto emit_checkpoint = [&]() {
        if (!config.checkpoint_path.empty()) save_checkpoint(ckpt, config.checkpoint_path);
        if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
    };
    emit_checkpoint();

    const double tau = ckpt.effect.tau;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        ckpt.effect.temperature = temperature_at(epoch, ckpt.schedule);
        EpochMetrics row;
        row.epoch = epoch;

        // A NonFinite error propagates from here; the checkpoint on disk is
        // then the last good one.
        for (std::size_t step = 0; step < steps; ++step) {
            if (hooks.before_step) hooks.before_step(epoch, step, ckpt.effect, ckpt.critic);
            const auto batch = corpus::sample_batch(corpus, config.batch_size, config.sampling, rng);

            std::vector<ad::Tensor> effect_grads = effect_zero_grads(ckpt.effect);
            augan::BatchLosses critic_parts;
            for (int k = 0; k < config.critic_steps; ++k) {
                std::vector<double> u(batch.size());
                for (double& v : u) v = unit(rng);
                const augan::CriticVars cv = augan::make_critic_vars(ckpt.critic, true);
                const EffectVars ev = make_effect_vars(ckpt.effect, true);
                const augan::LossGraph lg = augan::critic_loss_graph(batch, cv, ev, config.weights, u);
                std::vector<ad::Var> wrt = cv.all();
                wrt.push_back(ev.kernel);
                wrt.push_back(ev.bias);
                wrt.push_back(ev.scale);
                const std::vector<ad::Var> grads = ad::grad(lg.total, wrt);

                std::vector<ad::Tensor> critic_grads;
                const std::size_t n_critic = wrt.size() - 3;
                for (std::size_t i = 0; i < n_critic; ++i) critic_grads.push_back(grads[i].value());
                for (std::size_t i = 0; i < 3; ++i) {
                    const auto& g = grads[n_critic + i].value();
                    for (std::size_t j = 0; j < g.size(); ++j) effect_grads[i].data[j] += g.data[j];
                }
                const auto critic_tensors = ckpt.critic.tensors();
                ad::adam_step(critic_tensors, critic_grads, ckpt.critic_optimizer);
                critic_parts = lg.parts;
            }

            const augan::CriticVars cv = augan::make_critic_vars(ckpt.critic, false);
            const EffectVars ev = make_effect_vars(ckpt.effect, true);
            const augan::LossGraph gg = augan::generator_loss_graph(batch, cv, ev, config.weights);
            const std::vector<ad::Var> wrt{ev.kernel, ev.bias, ev.scale};
            const std::vector<ad::Var> grads = ad::grad(gg.total, wrt);
            for (std::size_t i = 0; i < 3; ++i) {
                const auto& g = grads[i].value();
                for (std::size_t j = 0; j < g.size(); ++j) effect_grads[i].data[j] += g.data[j];
            }
            ad::adam_step(ckpt.effect.learnable(), effect_grads, ckpt.effect_optimizer);
            for (const ad::Tensor* t : ckpt.effect.learnable())
                if (!t->all_finite()) throw Error(ErrorCode::NonFinite, "effect parameters became non-finite");

            row.critic_loss += critic_parts.critic_total;
            row.wasserstein += critic_parts.wasserstein_estimate;
            row.generator_loss += gg.parts.generator_total;
            row.violation += gg.parts.violation_mean;
        }

        const double inv = 1.0 / static_cast<double>(steps);
        row.critic_loss *= inv;
        row.wasserstein *= inv;
        row.generator_loss *= inv;
        row.violation *= inv;
        row.temperature = ckpt.effect.temperature;
        row.scale = ckpt.effect.scale_value();
        for (double v : {row.critic_loss, row.wasserstein, row.generator_loss, row.violation, row.scale})
            if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "epoch metrics became non-finite");
        if (ckpt.effect.tau != tau) throw Error(ErrorCode::InvalidArgument, "gate threshold changed during training");

        result.metrics.push_back(row);
        ckpt.epoch = epoch;
        if (!config.metrics_path.empty()) export_metrics(result.metrics, config.metrics_path);
        if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) emit_checkpoint();
    }
    return result;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt)
{
    Writer payload;
    payload.tensor(ckpt.effect.kernel);
    payload.tensor(ckpt.effect.bias);
    payload.tensor(ckpt.effect.scale);
    payload.f64(ckpt.effect.tau);
    payload.f64(ckpt.effect.temperature);

    const auto& cc = ckpt.critic.config;
    payload.u32(static_cast<std::uint32_t>(cc.channels.size()));
    for (std::size_t ch : cc.channels) payload.u64(ch);
    payload.u64(cc.hidden);
    payload.f64(cc.leak);
    if (ckpt.critic.conv_w.size() != cc.channels.size() || ckpt.critic.conv_b.size() != cc.channels.size())
        throw Error(ErrorCode::InvalidArgument, "critic parameters do not match the critic config");
    const auto critic_tensors = ckpt.critic.tensors();
    payload.u32(static_cast<std::uint32_t>(critic_tensors.size()));
    for (const ad::Tensor* t : critic_tensors) payload.tensor(*t);

    write_adam(payload, ckpt.effect_optimizer);
    write_adam(payload, ckpt.critic_optimizer);
    payload.i64(ckpt.epoch);
    payload.u64(ckpt.seed);
    payload.f64(ckpt.schedule.temp_start);
    payload.f64(ckpt.schedule.temp_end);
    payload.i64(ckpt.schedule.total_epochs);
    payload.f64(ckpt.norm_constant);
    payload.u64(ckpt.stft.fft_size);
    payload.u64(ckpt.stft.hop);
    payload.i64(ckpt.stft.sample_rate);

    Writer file;
    auto& out = file.bytes();
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    file.u32(ckpt.version);
    file.u64(payload.bytes().size());
    out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
    const auto d = digest(out);
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderSize + kDigestSize)
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw Error(ErrorCode::CorruptCheckpoint, "not a checkpoint file (bad magic)");
    Reader header(bytes.subspan(8, 12));
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                    std::to_string(kCheckpointVersion));
    const std::uint64_t size = header.u64();
    if (size != bytes.size() - kHeaderSize - kDigestSize)
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint length does not match its header");
    const auto body = bytes.first(kHeaderSize + size);
    const auto expected = digest(body);
    if (std::memcmp(expected.data(), bytes.data() + body.size(), kDigestSize) != 0)
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint digest mismatch");

    Reader r(bytes.subspan(kHeaderSize, size));
    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.effect.kernel = r.tensor();
    ckpt.effect.bias = r.tensor();
    ckpt.effect.scale = r.tensor();
    ckpt.effect.tau = r.f64();
    ckpt.effect.temperature = r.f64();
    if (ckpt.effect.kernel.shape != ad::Shape{1, 1, 3, 3} || ckpt.effect.bias.size() != 1 ||
        ckpt.effect.scale.size() != 1)
        Reader::corrupt("effect shapes");

    auto& cc = ckpt.critic.config;
    const std::uint32_t layers = r.u32();
    if (layers > 64) Reader::corrupt("critic depth");
    cc.channels.resize(layers);
    for (auto& ch : cc.channels) ch = static_cast<std::size_t>(r.u64());
    cc.hidden = static_cast<std::size_t>(r.u64());
    cc.leak = r.f64();
    const std::uint32_t tensors = r.u32();
    if (tensors != 2 * layers + 4) Reader::corrupt("critic tensor count");
    for (std::uint32_t i = 0; i < layers; ++i) {
        ckpt.critic.conv_w.push_back(r.tensor());
        ckpt.critic.conv_b.push_back(r.tensor());
    }
    ckpt.critic.fuse_w = r.tensor();
    ckpt.critic.fuse_b = r.tensor();
    ckpt.critic.head_w = r.tensor();
    ckpt.critic.head_b = r.tensor();

    ckpt.effect_optimizer = read_adam(r);
    ckpt.critic_optimizer = read_adam(r);
    ckpt.epoch = static_cast<int>(r.i64());
    ckpt.seed = r.u64();
    ckpt.schedule.temp_start = r.f64();
    ckpt.schedule.temp_end = r.f64();
    ckpt.schedule.total_epochs = static_cast<int>(r.i64());
    ckpt.norm_constant = r.f64();
    ckpt.stft.fft_size = static_cast<std::size_t>(r.u64());
    ckpt.stft.hop = static_cast<std::size_t>(r.u64());
    ckpt.stft.sample_rate = static_cast<int>(r.i64());
    if (r.remaining() != 0) Reader::corrupt("trailing bytes");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = serialize_checkpoint(ckpt);
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, tmp.string() + ": cannot open for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, tmp.string() + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes)
{
    const auto d = digest(bytes);
    std::ostringstream os;
    for (std::uint8_t b : d) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
    return os.str();
}

void export_metrics(std::span<const EpochMetrics> metrics, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open for writing");
    out << "epoch,critic_loss,gen_loss,wasserstein,violation,temperature,scale\n";
    out << std::setprecision(17);
    for (const auto& m : metrics)
        out << m.epoch << ',' << m.critic_loss << ',' << m.generator_loss << ',' << m.wasserstein << ','
            << m.violation << ',' << m.temperature << ',' << m.scale << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": write failed");
}

} // namespace cak::train
