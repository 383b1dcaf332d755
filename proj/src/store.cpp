#include "framesmith/store.hpp"

#include <fstream>
#include <sstream>

#include "framesmith/error.hpp"

namespace framesmith {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* models_file = "models.jsonl";
constexpr const char* videos_file = "videos.jsonl";
constexpr const char* frames_file = "frames.jsonl";
constexpr const char* predictions_file = "predictions.jsonl";
constexpr const char* captures_file = "captures.jsonl";
constexpr const char* labels_file = "labels.jsonl";

[[noreturn]] void corrupt(const fs::path& file, std::size_t line, const std::string& why) {
    std::string where = file.string() + (line ? ":" + std::to_string(line) : std::string());
    throw Error(ErrorCode::internal, "corrupt store file " + where + ": " + why,
                json{{"path", file.string()}, {"line", line}});
}

void write_atomically(const fs::path& file, const std::string& contents) {
    fs::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::internal, "cannot write " + tmp.string(), json{{"path", tmp.string()}});
        out << contents;
        out.flush();
        if (!out) throw Error(ErrorCode::internal, "cannot write " + tmp.string(), json{{"path", tmp.string()}});
    }
    fs::rename(tmp, file);
}

void append_line(const fs::path& file, const std::string& line) {
    std::ofstream out(file, std::ios::binary | std::ios::app);
    out << line << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::internal, "cannot write " + file.string(), json{{"path", file.string()}});
}

template <typename Fn>
void for_each_line(const fs::path& file, Fn&& fn) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            corrupt(file, line_no, e.what());
        } catch (const Error& e) {
            corrupt(file, line_no, e.what());
        }
    }
}

std::string catalog_models(const Catalog& c) {
    std::string out;
    for (const auto& m : c.models()) out += json(m).dump() + '\n';
    return out;
}

std::string catalog_videos(const Catalog& c) {
    std::string out;
    for (const auto& v : c.videos()) out += json{{"videoId", v.videoId}, {"name", v.name}}.dump() + '\n';
    return out;
}

std::string catalog_frames(const Catalog& c) {
    std::string out;
    for (const auto& f : c.frames()) out += json(f).dump() + '\n';
    return out;
}

std::string all_predictions(const Snapshot& s) {
    std::ostringstream out;
    for (const auto& [id, table] : s.predictions) table->write_records(out);
    return out.str();
}

std::string session_captures(const SessionState& s) {
    std::string out;
    for (const auto& c : s.captures()) out += json(c).dump() + '\n';
    return out;
}

std::string session_labels(const SessionState& s) {
    std::string out;
    for (const auto& l : s.labels()) out += json(l).dump() + '\n';
    return out;
}

}  // namespace

std::int64_t wall_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

const PredictionTable* Snapshot::table(std::string_view modelId) const {
    auto it = predictions.find(modelId);
    return it == predictions.end() ? nullptr : it->second.get();
}

bool Snapshot::same_contents(const Snapshot& other) const {
    if (!(*catalog == *other.catalog) || !(*session == *other.session)) return false;
    if (predictions.size() != other.predictions.size()) return false;
    for (const auto& [id, table] : predictions) {
        const PredictionTable* theirs = other.table(id);
        if (!theirs || !(*table == *theirs)) return false;
    }
    return true;
}

Store::Store() : current_(std::make_shared<const Snapshot>()), clock_(wall_clock_ms) {}

Store::Store(fs::path data_dir) : data_dir_(std::move(data_dir)), clock_(wall_clock_ms) {
    std::error_code ec;
    fs::create_directories(*data_dir_, ec);
    if (ec)
        throw Error(ErrorCode::internal, "cannot create data dir " + data_dir_->string() + ": " + ec.message(),
                    json{{"path", data_dir_->string()}});
    current_ = std::make_shared<const Snapshot>(read(*data_dir_));
}

Snapshot Store::read(const fs::path& dir) {
    auto catalog = std::make_shared<Catalog>();
    for_each_line(dir / models_file, [&](const json& j) { catalog->register_model(j.get<ModelDescriptor>()); });
    for_each_line(dir / videos_file, [&](const json& j) {
        catalog->register_video(j.at("videoId").get<std::string>(), j.at("name").get<std::string>());
    });

    const fs::path frames_path = dir / frames_file;
    if (std::ifstream in(frames_path, std::ios::binary); in) {
        IngestReport report = catalog->ingest_frames(in);
        if (!report.rejected.empty())
            corrupt(frames_path, report.rejected.front().line, report.rejected.front().reason);
    }

    Snapshot snap;
    std::map<std::string, std::shared_ptr<PredictionTable>, std::less<>> tables;
    for (const auto& m : catalog->models()) {
        auto t = std::make_shared<PredictionTable>(m);
        t->realign(*catalog);
        tables.emplace(m.modelId, t);
    }
    for_each_line(dir / predictions_file, [&](const json& j) {
        auto id = j.at("modelId").get<std::string>();
        auto it = tables.find(id);
        if (it == tables.end()) throw Error(ErrorCode::internal, "prediction for unknown model '" + id + "'");
        it->second->insert(it->second->parse_record(j, *catalog), *catalog);
    });
    for (auto& [id, t] : tables) snap.predictions.emplace(id, std::move(t));

    std::vector<CaptureItem> captures;
    std::vector<LabelAssignment> labels;
    for_each_line(dir / captures_file, [&](const json& j) {
        auto c = j.get<CaptureItem>();
        if (!catalog->frame(c.frameId)) throw Error(ErrorCode::internal, "capture of unknown frame " + c.frameId);
        captures.push_back(std::move(c));
    });
    for_each_line(dir / labels_file, [&](const json& j) {
        auto l = j.get<LabelAssignment>();
        const ModelDescriptor* m = catalog->model(l.modelId);
        if (!m || !catalog->frame(l.frameId) || !m->class_index(l.cls))
            throw Error(ErrorCode::internal, "label does not match the catalog");
        labels.push_back(std::move(l));
    });
    auto session = std::make_shared<SessionState>();
    session->restore(std::move(captures), std::move(labels));

    snap.catalog = std::move(catalog);
    snap.session = std::move(session);
    return snap;
}

void Store::write(const Snapshot& s, const fs::path& dir) {
    fs::create_directories(dir);
    write_atomically(dir / models_file, catalog_models(*s.catalog));
    write_atomically(dir / videos_file, catalog_videos(*s.catalog));
    write_atomically(dir / frames_file, catalog_frames(*s.catalog));
    write_atomically(dir / predictions_file, all_predictions(s));
    write_atomically(dir / captures_file, session_captures(*s.session));
    write_atomically(dir / labels_file, session_labels(*s.session));
}

std::shared_ptr<const Snapshot> Store::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return current_;
}

void Store::set_clock(Clock clock) {
    std::lock_guard lock(write_mutex_);
    clock_ = std::move(clock);
}

void Store::publish(Snapshot next, unsigned parts) {
    if (data_dir_) {
        const fs::path& dir = *data_dir_;
        if (parts & catalog_part) {
            write_atomically(dir / models_file, catalog_models(*next.catalog));
            write_atomically(dir / videos_file, catalog_videos(*next.catalog));
            write_atomically(dir / frames_file, catalog_frames(*next.catalog));
        }
        if (parts & predictions_part) write_atomically(dir / predictions_file, all_predictions(next));
        if (parts & session_part) {
            write_atomically(dir / captures_file, session_captures(*next.session));
            write_atomically(dir / labels_file, session_labels(*next.session));
        }
    }
    auto fresh = std::make_shared<const Snapshot>(std::move(next));
    std::lock_guard lock(snapshot_mutex_);
    current_ = std::move(fresh);
}

void Store::publish_appended(Snapshot next, const char* file, const json& record) {
    if (data_dir_) append_line(*data_dir_ / file, record.dump());
    auto fresh = std::make_shared<const Snapshot>(std::move(next));
    std::lock_guard lock(snapshot_mutex_);
    current_ = std::move(fresh);
}

IngestReport Store::ingest_frames(std::istream& manifest, const fs::path& base_dir) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto catalog = std::make_shared<Catalog>(*next.catalog);
    IngestReport report = catalog->ingest_frames(manifest, base_dir);
    if (report.accepted == 0) return report;
    for (auto& [id, table] : next.predictions) {
        auto t = std::make_shared<PredictionTable>(*table);
        t->realign(*catalog);
        table = std::move(t);
    }
    next.catalog = std::move(catalog);
    publish(std::move(next), catalog_part);
    return report;
}

void Store::register_video(const std::string& videoId, const std::string& name) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto catalog = std::make_shared<Catalog>(*next.catalog);
    catalog->register_video(videoId, name);
    next.catalog = std::move(catalog);
    publish(std::move(next), catalog_part);
}

ModelDescriptor Store::register_model(const ModelDescriptor& model) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    if (next.catalog->model(model.modelId)) {
        Catalog probe = *next.catalog;
        return probe.register_model(model);  // identical → returns stored; conflicting → throws
    }
    auto catalog = std::make_shared<Catalog>(*next.catalog);
    ModelDescriptor stored = catalog->register_model(model);
    auto table = std::make_shared<PredictionTable>(stored);
    table->realign(*catalog);
    next.predictions.insert_or_assign(stored.modelId, std::move(table));
    next.catalog = std::move(catalog);
    publish(std::move(next), catalog_part | predictions_part);
    return stored;
}

IngestReport Store::ingest_predictions(const std::string& modelId, std::istream& records) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto it = next.predictions.find(modelId);
    if (it == next.predictions.end())
        throw Error(ErrorCode::not_found, "unknown model '" + modelId + "'", json{{"modelId", modelId}});
    auto table = std::make_shared<PredictionTable>(*it->second);
    IngestReport report = table->ingest(records, *next.catalog);
    if (report.accepted == 0) return report;
    it->second = std::move(table);
    publish(std::move(next), predictions_part);
    return report;
}

CaptureItem Store::capture(const std::string& frameId, const std::string& reasonTag,
                           const std::optional<std::string>& modelId, const std::optional<std::string>& note) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto session = std::make_shared<SessionState>(*next.session);
    std::size_t before = session->captures().size();
    CaptureItem item = session->capture(*next.catalog, frameId, reasonTag, modelId, note, clock_());
    if (session->captures().size() == before) return item;
    next.session = std::move(session);
    publish_appended(std::move(next), captures_file, item);
    return item;
}

LabelAssignment Store::assign_label(const std::string& modelId, const std::string& frameId,
                                    const std::string& cls) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto session = std::make_shared<SessionState>(*next.session);
    LabelAssignment label = session->assign_label(*next.catalog, modelId, frameId, cls, clock_());
    next.session = std::move(session);
    // Reassignments append too; the last line for a (model, frame) wins on reload.
    publish_appended(std::move(next), labels_file, label);
    return label;
}

IngestReport Store::import_labels(const std::string& modelId, std::istream& in) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto session = std::make_shared<SessionState>(*next.session);
    IngestReport report = session->import_labels(*next.catalog, modelId, in, clock_());
    next.session = std::move(session);
    publish(std::move(next), session_part);
    return report;
}

std::size_t Store::clear_labels(const std::string& modelId) {
    std::lock_guard lock(write_mutex_);
    Snapshot next = *snapshot();
    auto session = std::make_shared<SessionState>(*next.session);
    std::size_t removed = session->clear_labels(modelId);
    next.session = std::move(session);
    publish(std::move(next), session_part);
    return removed;
}

void Store::flush() {
    std::lock_guard lock(write_mutex_);
    if (data_dir_) write(*snapshot(), *data_dir_);
}

}  // namespace framesmith
