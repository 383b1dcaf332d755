#include "framesmith/service.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "framesmith/analytics.hpp"
#include "framesmith/query.hpp"

namespace framesmith::service {

using nlohmann::json;

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::validation:
    case ErrorCode::syntax:
    case ErrorCode::task_mismatch: return 400;
    case ErrorCode::conflict: return 409;
    case ErrorCode::internal: return 500;
    }
    return 500;
}

json error_body(const Error& e) {
    return {{"error", {{"code", to_string(e.code())}, {"message", e.what()}, {"detail", e.detail()}}}};
}

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_error(httplib::Response& res, const Error& e) {
    res.status = http_status(e.code());
    res.set_content(error_body(e).dump(), "application/json");
}

void send_json(httplib::Response& res, const json& body) {
    res.status = 200;
    res.set_content(body.dump(), "application/json");
}

// Every route goes through here so that each failure yields exactly one
// ApiError body.
Handler guarded(Handler inner) {
    return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
        try {
            inner(req, res);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const json::exception& e) {
            send_error(res, Error(ErrorCode::validation, std::string("bad request body: ") + e.what()));
        } catch (const std::exception& e) {
            send_error(res, Error(ErrorCode::internal, e.what()));
        }
    };
}

std::string required(const httplib::Request& req, const std::string& name) {
    if (!req.has_param(name) || req.get_param_value(name).empty())
        throw Error(ErrorCode::validation, "missing parameter '" + name + "'", json{{"param", name}});
    return req.get_param_value(name);
}

std::optional<std::string> optional_param(const httplib::Request& req, const std::string& name) {
    if (!req.has_param(name) || req.get_param_value(name).empty()) return std::nullopt;
    return req.get_param_value(name);
}

template <typename T>
T number(const std::string& name, const std::string& text) {
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw Error(ErrorCode::validation, "parameter '" + name + "' is not a number", json{{"param", name}});
    return value;
}

template <typename T>
T number_param(const httplib::Request& req, const std::string& name, T fallback) {
    auto text = optional_param(req, name);
    return text ? number<T>(name, *text) : fallback;
}

json parse_body(const httplib::Request& req) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object())
        throw Error(ErrorCode::validation, "request body must be a JSON object");
    return body;
}

std::optional<std::string> optional_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

std::string content_type(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    if (ext == ".bmp") return "image/bmp";
    return "application/octet-stream";
}

const FrameRecord& require_frame(const Snapshot& snap, const std::string& frameId) {
    const FrameRecord* frame = snap.catalog->frame(frameId);
    if (!frame) throw Error(ErrorCode::not_found, "unknown frame '" + frameId + "'", json{{"frameId", frameId}});
    return *frame;
}

}  // namespace

Server::Server(Store& store, Options options)
    : store_(store), options_(std::move(options)), http_(std::make_unique<httplib::Server>()) {
    const std::size_t threads = options_.threads;
    http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    // httplib's default also sets SO_REUSEPORT, which lets a second server share a taken port.
    http_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
}

Server::~Server() {
    if (thread_.joinable()) stop();
}

void Server::routes() {
    auto& http = *http_;

    http.Get("/videos", guarded([this](const auto&, auto& res) {
        send_json(res, store_.snapshot()->catalog->videos());
    }));

    http.Get("/models", guarded([this](const auto&, auto& res) {
        send_json(res, store_.snapshot()->catalog->models());
    }));

    http.Get(R"(/frames/([^/]+))", guarded([this](const auto& req, auto& res) {
        auto snap = store_.snapshot();
        const FrameRecord& frame = require_frame(*snap, req.matches[1]);
        json predictions = json::object();
        json labels = json::object();
        for (const auto& [modelId, table] : snap->predictions) {
            if (auto* c = table->classification(frame.frameId)) predictions[modelId] = *c;
            if (auto* d = table->detection(frame.frameId)) predictions[modelId] = *d;
            if (auto* l = snap->session->label(modelId, frame.frameId)) labels[modelId] = l->cls;
        }
        send_json(res, {{"frame", frame}, {"predictions", predictions}, {"labels", labels}});
    }));

    // httplib routes HEAD through the GET handlers and drops the body.
    http.Get(R"(/frames/([^/]+)/image)", guarded([this](const auto& req, auto& res) {
        auto snap = store_.snapshot();
        const FrameRecord& frame = require_frame(*snap, req.matches[1]);
        std::ifstream in(frame.imageRef, std::ios::binary);
        if (!in)
            throw Error(ErrorCode::not_found, "image not readable",
                        json{{"frameId", frame.frameId}, {"path", frame.imageRef}});
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        res.status = 200;
        res.set_header("Cache-Control", "private, max-age=86400");
        res.set_content(std::move(bytes), content_type(frame.imageRef));
    }));

    http.Post("/query", guarded([this](const auto& req, auto& res) {
        json body = parse_body(req);
        auto text = optional_string(body, "q");
        if (!text) throw Error(ErrorCode::validation, "missing field 'q'", json{{"field", "q"}});
        auto snap = store_.snapshot();
        query::Query q = query::parse(*text);
        if (auto it = body.find("limit"); it != body.end() && !it->is_null()) {
            auto limit = it->get<std::int64_t>();
            if (limit <= 0) throw Error(ErrorCode::validation, "limit must be positive");
            q.limit = q.limit ? std::min(*q.limit, limit) : limit;
        }
        auto frames = query::run_query(*snap, query::check(std::move(q), *snap->catalog));
        send_json(res, {{"frames", frames}, {"count", frames.size()}});
    }));

    http.Get("/timeline", guarded([this](const auto& req, auto& res) {
        std::vector<std::string> models;
        for (std::size_t i = 0, n = req.get_param_value_count("model"); i < n; ++i)
            models.push_back(req.get_param_value("model", i));
        if (models.empty()) throw Error(ErrorCode::validation, "missing parameter 'model'", json{{"param", "model"}});
        std::string video = required(req, "video");
        auto snap = store_.snapshot();
        std::int64_t fallback = 100;
        if (auto v = snap->catalog->video(video)) fallback = std::clamp<std::int64_t>(v->frameCount, 1, 100);
        auto bins = number_param<std::int64_t>(req, "bins", fallback);
        send_json(res, analytics::stack_timelines(*snap, models, video, bins));
    }));

    http.Get("/scatter", guarded([this](const auto& req, auto& res) {
        auto snap = store_.snapshot();
        auto x = analytics::parse_axis(required(req, "x"));
        auto y = analytics::parse_axis(required(req, "y"));
        std::optional<query::CheckedQuery> filter;
        if (auto q = optional_param(req, "q")) filter = query::check(query::parse(*q), *snap->catalog);
        auto points = analytics::project_scatter(*snap, x, y, filter ? &*filter : nullptr);
        send_json(res, {{"x", x}, {"y", y}, {"points", points}});
    }));

    http.Get("/mine/borderline", guarded([this](const auto& req, auto& res) {
        auto model = required(req, "model");
        auto low = number_param(req, "low", analytics::default_band_low);
        auto high = number_param(req, "high", analytics::default_band_high);
        auto frames = analytics::find_borderline(*store_.snapshot(), model, low, high, optional_param(req, "video"));
        send_json(res, {{"model", model}, {"low", low}, {"high", high}, {"frames", frames}});
    }));

    http.Get("/mine/disagreement", guarded([this](const auto& req, auto& res) {
        analytics::DisagreementSpec spec;
        spec.classifierModel = required(req, "classifier");
        spec.absenceClass = required(req, "absence");
        spec.detectorModel = required(req, "detector");
        spec.objectClass = required(req, "object");
        spec.detectorThreshold = number_param(req, "threshold", spec.detectorThreshold);
        if (auto mode = optional_param(req, "mode")) spec.mode = analytics::disagreement_mode_from_string(*mode);
        auto found = analytics::find_disagreements(*store_.snapshot(), spec, optional_param(req, "video"));
        send_json(res, {{"mode", analytics::to_string(spec.mode)},
                        {"threshold", spec.detectorThreshold},
                        {"frames", found}});
    }));

    http.Get("/mine/flicker", guarded([this](const auto& req, auto& res) {
        analytics::FlickerConfig cfg;
        auto model = required(req, "model");
        auto video = required(req, "video");
        cfg.windowSize = number_param(req, "w", cfg.windowSize);
        cfg.minChanges = number_param(req, "min", cfg.minChanges);
        auto intervals = analytics::detect_flicker(*store_.snapshot(), model, video, cfg);
        send_json(res, {{"model", model}, {"video", video}, {"intervals", intervals}});
    }));

    http.Post("/captures", guarded([this](const auto& req, auto& res) {
        json body = parse_body(req);
        auto frameId = optional_string(body, "frameId");
        auto tag = optional_string(body, "reasonTag");
        if (!frameId) throw Error(ErrorCode::validation, "missing field 'frameId'", json{{"field", "frameId"}});
        if (!tag) throw Error(ErrorCode::validation, "missing field 'reasonTag'", json{{"field", "reasonTag"}});
        send_json(res, store_.capture(*frameId, *tag, optional_string(body, "modelId"), optional_string(body, "note")));
    }));

    http.Get("/captures", guarded([this](const auto& req, auto& res) {
        CaptureFilter filter{optional_param(req, "tag"), optional_param(req, "model")};
        send_json(res, store_.snapshot()->session->list_captures(filter));
    }));

    http.Post("/labels", guarded([this](const auto& req, auto& res) {
        json body = parse_body(req);
        auto modelId = optional_string(body, "modelId");
        auto frameId = optional_string(body, "frameId");
        auto cls = optional_string(body, "class");
        for (auto [name, value] : {std::pair{"modelId", &modelId}, {"frameId", &frameId}, {"class", &cls}})
            if (!*value) throw Error(ErrorCode::validation, std::string("missing field '") + name + "'",
                                     json{{"field", name}});
        send_json(res, store_.assign_label(*modelId, *frameId, *cls));
    }));

    http.Get("/export/labels", guarded([this](const auto& req, auto& res) {
        auto snap = store_.snapshot();
        LabelExport out = snap->session->export_labels(*snap->catalog, required(req, "model"));
        json labels = json::array();
        std::istringstream lines(out.jsonl);
        for (std::string line; std::getline(lines, line);)
            if (!line.empty()) labels.push_back(json::parse(line));
        send_json(res, {{"labels", labels}, {"summary", out.summary}, {"total", out.total}});
    }));

    if (options_.uiDir && !http.set_mount_point("/ui", options_.uiDir->string()))
        throw Error(ErrorCode::not_found, "ui directory not found", json{{"path", options_.uiDir->string()}});

    http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        if (res.status == 404)
            send_error(res, Error(ErrorCode::not_found, "no route for " + req.path, json{{"path", req.path}}));
        else
            send_error(res, Error(ErrorCode::validation, "bad request"));
    });
}

int Server::bind() {
    if (port_ >= 0) return port_;
    if (options_.port == 0) {
        port_ = http_->bind_to_any_port(options_.host);
        if (port_ < 0) throw Error(ErrorCode::internal, "could not bind any port");
    } else {
        if (!http_->bind_to_port(options_.host, options_.port))
            throw Error(ErrorCode::internal, "port " + std::to_string(options_.port) + " is busy",
                        json{{"port", options_.port}});
        port_ = options_.port;
    }
    return port_;
}

void Server::run() {
    bind();
    http_->listen_after_bind();
}

void Server::start() {
    bind();
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
}

void Server::stop() {
    if (stopped_) return;
    stopped_ = true;
    http_->stop();
    if (thread_.joinable()) thread_.join();
    store_.flush();
}

}  // namespace framesmith::service
