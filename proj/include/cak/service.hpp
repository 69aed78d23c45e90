#pragma once

#include "cak/trainer.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cak::service {

inline constexpr std::size_t kMaxUploadBytes = 50u * 1024u * 1024u;
inline constexpr int kHealthVersion = 1;

/// Loaded once at startup and never mutated afterwards.
struct ServiceState {
    std::optional<train::Checkpoint> checkpoint;
    std::string checkpoint_path;
    std::string checkpoint_digest;  ///< hex SHA-256 of the checkpoint file
    std::string load_error;         ///< why the checkpoint is missing, if it is
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
};

/// A missing or unreadable checkpoint leaves the state degraded instead of
/// throwing, so /api/health can report it.
ServiceState load_state(const std::filesystem::path& checkpoint_path);
ServiceState make_state(train::Checkpoint checkpoint, std::string digest = {});

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;

    std::string header(std::string_view name) const;
};

/// POST /api/process. `control` is the raw form field.
/// 200: audio/wav body with X-Processing-Time-Ms, X-Applied-Control and
/// X-Magnitude-Delta-L1 headers. 400 ERR:BAD_WAV / ERR:BAD_CONTROL /
/// ERR:TOO_SHORT, 413 ERR:TOO_LARGE, 500 ERR:INTERNAL with an error id.
Response handle_process(const ServiceState& state, std::span<const std::uint8_t> wav, std::string_view control);

/// GET /api/kernel: KernelReport JSON, 500 without a checkpoint.
Response handle_kernel(const ServiceState& state);

/// GET /api/health: {"status": "ok"|"degraded", "checkpoint_digest", "uptime_seconds", ...}.
Response handle_health(const ServiceState& state);

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string cors_origin = "*";
    int threads = 4;
};

/// Blocking HTTP server around the handlers.
class Server {
public:
    Server(std::shared_ptr<const ServiceState> state, ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the socket; port 0 picks a free port. Returns the bound port.
    int bind();
    /// Serves until stop(); call bind() first.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace cak::service
