#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "framesmith/error.hpp"
#include "framesmith/store.hpp"

namespace httplib {
class Server;
}

namespace framesmith::service {

struct Options {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::optional<std::filesystem::path> uiDir;
    std::size_t threads = 32;
};

/// HTTP status for an error code.
int http_status(ErrorCode code);

/// {"error": {"code", "message", "detail"}}
nlohmann::json error_body(const Error& e);

/// REST facade over a Store. Reads are served from snapshots; writes go
/// through the store's writer lock.
class Server {
public:
    Server(Store& store, Options options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the listening socket and returns the bound port. Throws
    /// Error(internal) when the port is taken.
    int bind();

    /// Serves on the calling thread until stop().
    void run();

    /// bind() if needed, then serves on a background thread.
    void start();

    /// Stops serving, joins the background thread and flushes the store.
    void stop();

    int port() const { return port_; }

private:
    void routes();

    Store& store_;
    Options options_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
    int port_ = -1;
    bool stopped_ = false;
};

}  // namespace framesmith::service
