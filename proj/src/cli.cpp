#include "cak/cli.hpp"

#include "cak/audio_io.hpp"
#include "cak/corpus.hpp"
#include "cak/error.hpp"
#include "cak/inferencer.hpp"
#include "cak/service.hpp"
#include "cak/trainer.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iomanip>
#include <ostream>

namespace cak::cli {

namespace {

namespace fs = std::filesystem;

std::atomic<service::Server*> active_server{nullptr};

void stop_server(int)
{
    if (auto* s = active_server.load()) s->stop();
}

struct Options {
    std::string corpus_dir;
    std::string checkpoint = "cak.ckpt";
    std::string metrics = "metrics.csv";
    std::string input;
    std::string output;
    double control = 0.0;
    bool json = false;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string cors_origin = "*";
    double segment_seconds = 15.0;
    bool reingest = false;
    train::TrainConfig train;
};

void require_dir(const std::string& dir)
{
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, dir + ": not a directory");
}

void require_file(const std::string& path)
{
    if (!fs::is_regular_file(path)) throw Error(ErrorCode::IoFailure, path + ": no such file");
}

corpus::Corpus ingest_dir(const Options& o, std::ostream& out)
{
    corpus::Corpus c = corpus::ingest(o.corpus_dir, spectral::StftConfig{}, {o.segment_seconds, 99.5});
    const fs::path index_path = fs::path(o.corpus_dir) / kIndexFileName;
    corpus::write_index(c.index, index_path);
    out << "indexed " << c.index.entries.size() << " segments, norm constant " << c.index.norm_constant << " -> "
        << index_path.string() << '\n';
    return c;
}

corpus::Corpus open_corpus(const Options& o, std::ostream& out)
{
    const fs::path index_path = fs::path(o.corpus_dir) / kIndexFileName;
    if (!o.reingest && fs::exists(index_path)) {
        const corpus::CorpusIndex index = corpus::read_index(index_path);
        if (index.segment_seconds == o.segment_seconds) {
            out << "using index " << index_path.string() << '\n';
            return corpus::load(index);
        }
    }
    return ingest_dir(o, out);
}

int cmd_train(Options& o, std::ostream& out)
{
    require_dir(o.corpus_dir);
    const corpus::Corpus corpus = open_corpus(o, out);
    o.train.checkpoint_path = o.checkpoint;
    o.train.metrics_path = o.metrics;
    o.train.validate();
    train::TrainHooks hooks;
    const train::TrainResult result = train::train(corpus, o.train, hooks);
    for (const auto& m : result.metrics)
        out << "epoch " << m.epoch << " critic " << m.critic_loss << " gen " << m.generator_loss << " violation "
            << m.violation << " temp " << m.temperature << '\n';
    out << "checkpoint " << o.checkpoint << ", metrics " << o.metrics << '\n';
    return 0;
}

int cmd_apply(const Options& o, std::ostream& out)
{
    require_file(o.input);
    require_file(o.checkpoint);
    const train::Checkpoint ckpt = train::load_checkpoint(o.checkpoint);
    const audio::AudioClip clip = audio::read_wav(o.input);
    const infer::EffectResult result = infer::apply_effect(clip, o.control, ckpt);
    audio::write_wav(result.audio, o.output);
    out << "wrote " << o.output << " (control " << o.control << ", magnitude delta L1 " << result.magnitude_delta_l1
        << ")\n";
    return 0;
}

int cmd_inspect(const Options& o, std::ostream& out)
{
    require_file(o.checkpoint);
    const infer::KernelReport report = infer::inspect_kernel(train::load_checkpoint(o.checkpoint));
    if (o.json) {
        out << infer::kernel_report_json(report).dump(2) << '\n';
        return 0;
    }
    out << "kernel (rows: frequency offset -1..+1, cols: time offset -1..+1)\n" << std::fixed << std::setprecision(6);
    for (const auto& row : report.weights) out << "  " << row[0] << "  " << row[1] << "  " << row[2] << '\n';
    out << "bias " << report.bias << "\nscale " << report.scale << "\nband response " << report.band_response[0]
        << ' ' << report.band_response[1] << ' ' << report.band_response[2] << "\ndominant [" << report.dominant.row
        << ',' << report.dominant.col << "] " << report.dominant.value << '\n';
    return 0;
}

int cmd_serve(const Options& o, std::ostream& out)
{
    auto state = std::make_shared<const service::ServiceState>(service::load_state(o.checkpoint));
    if (!state->checkpoint) std::cerr << "warning: serving without a checkpoint: " << state->load_error << '\n';
    service::Server server(state, {o.host, o.port, o.cors_origin, 4});
    const int port = server.bind();
    out << "listening on http://" << o.host << ':' << port << std::endl;
    active_server = &server;
    auto previous_int = std::signal(SIGINT, stop_server);
    auto previous_term = std::signal(SIGTERM, stop_server);
    server.listen();
    std::signal(SIGINT, previous_int);
    std::signal(SIGTERM, previous_term);
    active_server = nullptr;
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"Conditioning-aware kernel audio effect", "cak"};
    app.require_subcommand(1);

    auto* ingest = app.add_subcommand("ingest", "Build the corpus index next to the audio files");
    ingest->add_option("dir", o.corpus_dir, "Directory of .wav files")->required();
    ingest->add_option("--segment-seconds", o.segment_seconds, "Segment length")->capture_default_str();

    train::TrainConfig& t = o.train;
    auto* trn = app.add_subcommand("train", "Train an effect on a corpus directory");
    trn->add_option("dir", o.corpus_dir, "Directory of .wav files")->required();
    trn->add_option("--ckpt", o.checkpoint, "Checkpoint output path")->capture_default_str();
    trn->add_option("--metrics", o.metrics, "Metrics CSV output path")->capture_default_str();
    trn->add_option("--segment-seconds", o.segment_seconds, "Segment length")->capture_default_str();
    trn->add_flag("--reingest", o.reingest, "Rebuild the corpus index even if one exists");
    trn->add_option("--seed", t.seed, "Seed for all stochastic behavior")->capture_default_str();
    trn->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    trn->add_option("--batch-size", t.batch_size, "Pairs per batch")->capture_default_str()->check(CLI::PositiveNumber);
    trn->add_option("--steps-per-epoch", t.steps_per_epoch, "Steps per epoch (0: corpus size / batch)")
        ->capture_default_str();
    trn->add_option("--critic-steps", t.critic_steps, "Critic updates per generator update")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    trn->add_option("--lr", t.effect_optimizer.lr, "Effect learning rate")->capture_default_str();
    trn->add_option("--critic-lr", t.critic_optimizer.lr, "Critic learning rate")->capture_default_str();
    trn->add_option("--crop-bins", t.sampling.crop_bins, "Crop height in bins (0: full)")->capture_default_str();
    trn->add_option("--crop-frames", t.sampling.crop_frames, "Crop width in frames (0: full)")->capture_default_str();
    trn->add_option("--identity-fraction", t.sampling.identity_fraction, "Share of identity pairs")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    trn->add_flag("--random-control", t.sampling.random_control, "Draw transformation controls uniformly");
    trn->add_option("--checkpoint-every", t.checkpoint_every, "Epochs between checkpoints")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    auto* apply = app.add_subcommand("apply", "Process a WAV file with a trained checkpoint");
    apply->add_option("input", o.input, "Input WAV")->required();
    apply->add_option("--control,-c", o.control, "Effect strength in [0, 1]")->required()->check(CLI::Range(0.0, 1.0));
    apply->add_option("--ckpt", o.checkpoint, "Checkpoint path")->required();
    apply->add_option("-o,--output", o.output, "Output WAV")->required();

    auto* inspect = app.add_subcommand("inspect", "Print the learned kernel");
    inspect->add_option("--ckpt", o.checkpoint, "Checkpoint path")->required();
    inspect->add_flag("--json", o.json, "Emit the kernel report as JSON");

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--ckpt", o.checkpoint, "Checkpoint path")->required();
    serve->add_option("--port", o.port, "Port (0: any free port)")->capture_default_str()->check(CLI::Range(0, 65535));
    serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    serve->add_option("--cors-origin", o.cors_origin, "Allowed CORS origin")->capture_default_str();

    std::vector<char*> argv;
    std::vector<std::string> storage = args.empty() ? std::vector<std::string>{"cak"} : args;
    for (auto& a : storage) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "ERR:USAGE: " << e.what() << '\n';
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return 2;
    }

    try {
        if (*ingest) {
            require_dir(o.corpus_dir);
            ingest_dir(o, out);
            return 0;
        }
        if (*trn) return cmd_train(o, out);
        if (*apply) return cmd_apply(o, out);
        if (*inspect) return cmd_inspect(o, out);
        if (*serve) return cmd_serve(o, out);
    } catch (const Error& e) {
        err << e.diagnostic() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "ERR:INTERNAL: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace cak::cli
