#include "cak/service.hpp"

#include "cak/audio_io.hpp"
#include "cak/error.hpp"
#include "cak/inferencer.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

namespace cak::service {

namespace {

using json = nlohmann::ordered_json;

Response error_response(int status, std::string_view code, const std::string& message)
{
    Response r;
    r.status = status;
    json body;
    body["error"] = "ERR:" + std::string(code);
    body["message"] = message;
    r.body = body.dump();
    return r;
}

std::string next_error_id()
{
    static const std::uint64_t prefix = std::random_device{}();
    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << (prefix & 0xffffffffu) << '-' << counter.fetch_add(1);
    return os.str();
}

Response internal_error(const std::string& detail)
{
    const std::string id = next_error_id();
    std::cerr << "service error " << id << ": " << detail << '\n';
    Response r = error_response(500, "INTERNAL", "internal error");
    json body = json::parse(r.body);
    body["error_id"] = id;
    r.body = body.dump();
    return r;
}

std::optional<double> parse_control(std::string_view text)
{
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text.empty()) return std::nullopt;
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::string format_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace

std::string Response::header(std::string_view name) const
{
    for (const auto& [k, v] : headers)
        if (k == name) return v;
    return {};
}

ServiceState make_state(train::Checkpoint checkpoint, std::string digest)
{
    ServiceState s;
    s.checkpoint = std::move(checkpoint);
    s.checkpoint_digest = std::move(digest);
    return s;
}

ServiceState load_state(const std::filesystem::path& checkpoint_path)
{
    ServiceState s;
    s.checkpoint_path = checkpoint_path.string();
    std::ifstream in(checkpoint_path, std::ios::binary);
    if (!in) {
        s.load_error = "cannot open " + s.checkpoint_path;
        return s;
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        s.checkpoint = train::parse_checkpoint(bytes);
        s.checkpoint_digest = train::sha256_hex(bytes);
    } catch (const Error& e) {
        s.load_error = e.diagnostic();
    }
    return s;
}

Response handle_process(const ServiceState& state, std::span<const std::uint8_t> wav, std::string_view control)
{
    if (wav.size() > kMaxUploadBytes)
        return error_response(413, "TOO_LARGE", "upload exceeds " + std::to_string(kMaxUploadBytes) + " bytes");
    const auto c = parse_control(control);
    if (!c || *c < 0.0 || *c > 1.0)
        return error_response(400, "BAD_CONTROL", "control must be a number in [0, 1]");
    if (!state.checkpoint) return internal_error("no checkpoint loaded: " + state.load_error);

    try {
        const auto t0 = std::chrono::steady_clock::now();
        audio::AudioClip clip;
        try {
            clip = audio::decode_wav(wav, "upload");
        } catch (const Error& e) {
            return error_response(400, "BAD_WAV", e.what());
        }
        const infer::EffectResult result = infer::apply_effect(clip, *c, *state.checkpoint);
        const std::vector<std::uint8_t> out = audio::encode_wav(result.audio);
        const double elapsed_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        Response r;
        r.content_type = "audio/wav";
        r.body.assign(out.begin(), out.end());
        r.headers = {{"X-Processing-Time-Ms", format_double(elapsed_ms)},
                     {"X-Applied-Control", format_double(*c)},
                     {"X-Magnitude-Delta-L1", format_double(result.magnitude_delta_l1)}};
        if (result.sanity_clamped) r.headers.emplace_back("X-Sanity-Clamped", "1");
        return r;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::TooShort) return error_response(400, "TOO_SHORT", e.what());
        return internal_error(e.diagnostic());
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }
}

Response handle_kernel(const ServiceState& state)
{
    if (!state.checkpoint) return internal_error("kernel requested without a checkpoint: " + state.load_error);
    Response r;
    r.body = infer::kernel_report_json(infer::inspect_kernel(*state.checkpoint)).dump();
    return r;
}

Response handle_health(const ServiceState& state)
{
    json body;
    body["schema_version"] = kHealthVersion;
    body["status"] = state.checkpoint ? "ok" : "degraded";
    body["checkpoint_digest"] = state.checkpoint_digest;
    body["checkpoint_path"] = state.checkpoint_path;
    body["uptime_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - state.started).count();
    if (state.checkpoint) body["epoch"] = state.checkpoint->epoch;
    if (!state.load_error.empty()) body["detail"] = state.load_error;
    Response r;
    r.body = body.dump();
    return r;
}

struct Server::Impl {
    std::shared_ptr<const ServiceState> state;
    ServerOptions options;
    httplib::Server http;
};

namespace {

void send(httplib::Response& res, const Response& r)
{
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
}

} // namespace

Server::Server(std::shared_ptr<const ServiceState> state, ServerOptions options) : impl_(std::make_unique<Impl>())
{
    if (!state) throw Error(ErrorCode::InvalidArgument, "server needs a state");
    impl_->state = std::move(state);
    impl_->options = std::move(options);
    auto& http = impl_->http;
    const auto shared = impl_->state;
    const int threads = std::max(1, impl_->options.threads);
    http.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    // Leave room for multipart framing; the file part itself is checked again.
    http.set_payload_max_length(kMaxUploadBytes + 64 * 1024);
    http.set_default_headers({{"Access-Control-Allow-Origin", impl_->options.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Expose-Headers",
                               "X-Processing-Time-Ms, X-Applied-Control, X-Magnitude-Delta-L1, X-Sanity-Clamped"}});

    http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http.Post("/api/process", [shared](const httplib::Request& req, httplib::Response& res) {
        if (!req.is_multipart_form_data() || !req.has_file("file")) {
            send(res, error_response(400, "BAD_WAV", "expected multipart field 'file'"));
            return;
        }
        const auto file = req.get_file_value("file");
        std::string control = req.has_file("control") ? req.get_file_value("control").content : std::string{};
        if (control.empty() && req.has_param("control")) control = req.get_param_value("control");
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(file.content.data());
        send(res, handle_process(*shared, {bytes, file.content.size()}, control));
    });
    http.Get("/api/kernel", [shared](const httplib::Request&, httplib::Response& res) {
        send(res, handle_kernel(*shared));
    });
    http.Get("/api/health", [shared](const httplib::Request&, httplib::Response& res) {
        send(res, handle_health(*shared));
    });
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.status == 413) send(res, error_response(413, "TOO_LARGE", "request body too large"));
        else if (res.status == 404) send(res, error_response(404, "NOT_FOUND", "no such endpoint"));
    });
}

Server::~Server() { stop(); }

int Server::bind()
{
    auto& o = impl_->options;
    if (o.port == 0) {
        const int port = impl_->http.bind_to_any_port(o.host);
        if (port < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + o.host);
        o.port = port;
    } else if (!impl_->http.bind_to_port(o.host, o.port)) {
        throw Error(ErrorCode::IoFailure, "cannot bind " + o.host + ":" + std::to_string(o.port));
    }
    return o.port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

} // namespace cak::service
