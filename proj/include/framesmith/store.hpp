#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "framesmith/catalog.hpp"
#include "framesmith/predictions.hpp"
#include "framesmith/session.hpp"

namespace framesmith {

/// An immutable view of the whole store. Copies are cheap (shared
/// pointers) and may be handed across threads freely.
struct Snapshot {
    std::shared_ptr<const Catalog> catalog = std::make_shared<const Catalog>();
    std::map<std::string, std::shared_ptr<const PredictionTable>, std::less<>> predictions;
    std::shared_ptr<const SessionState> session = std::make_shared<const SessionState>();

    /// Prediction table of a registered model; an empty table when the model
    /// has no predictions yet, nullptr when the model is unknown.
    const PredictionTable* table(std::string_view modelId) const;

    /// Deep comparison of every record.
    bool same_contents(const Snapshot& other) const;
};

/// The embedded on-disk store: one directory of JSON Lines files. Writers
/// are serialized by an internal mutex and each mutation publishes a new
/// snapshot, so readers never block on writers and never observe a
/// half-applied change.
class Store {
public:
    using Clock = std::function<std::int64_t()>;

    /// In-memory store; nothing is persisted.
    Store();

    /// Opens (or initializes) the store in `data_dir`. Throws
    /// Error(internal) naming the file when a store file cannot be parsed.
    explicit Store(std::filesystem::path data_dir);

    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    std::shared_ptr<const Snapshot> snapshot() const;

    const std::optional<std::filesystem::path>& data_dir() const { return data_dir_; }

    /// Replaces the wall clock used for capture and label timestamps.
    void set_clock(Clock clock);

    IngestReport ingest_frames(std::istream& manifest, const std::filesystem::path& base_dir = {});
    void register_video(const std::string& videoId, const std::string& name);
    ModelDescriptor register_model(const ModelDescriptor& model);
    IngestReport ingest_predictions(const std::string& modelId, std::istream& records);

    CaptureItem capture(const std::string& frameId, const std::string& reasonTag,
                        const std::optional<std::string>& modelId = std::nullopt,
                        const std::optional<std::string>& note = std::nullopt);
    LabelAssignment assign_label(const std::string& modelId, const std::string& frameId, const std::string& cls);
    IngestReport import_labels(const std::string& modelId, std::istream& in);
    std::size_t clear_labels(const std::string& modelId);

    /// Rewrites every store file. Mutations already persist the files they
    /// touch; this is for shutdown and for copying a store elsewhere.
    void flush();

    /// Writes the snapshot's contents as a store directory.
    static void write(const Snapshot& snapshot, const std::filesystem::path& dir);
    static Snapshot read(const std::filesystem::path& dir);

private:
    enum Part : unsigned { catalog_part = 1, predictions_part = 2, session_part = 4 };

    void publish(Snapshot next, unsigned parts);
    // Appends one record to a session file, then publishes without rewriting.
    void publish_appended(Snapshot next, const char* file, const nlohmann::json& record);

    std::optional<std::filesystem::path> data_dir_;
    mutable std::mutex write_mutex_;
    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const Snapshot> current_;
    Clock clock_;
};

/// Milliseconds since the Unix epoch from the system clock.
std::int64_t wall_clock_ms();

}  // namespace framesmith
