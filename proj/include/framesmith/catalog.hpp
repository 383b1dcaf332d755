#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace framesmith {

struct VideoRecord {
    std::string videoId;
    std::string name;
    std::int64_t frameCount = 0;
    double durationSec = 0.0;

    bool operator==(const VideoRecord&) const = default;
};

struct FrameRecord {
    std::string frameId;
    std::string videoId;
    std::int64_t frameIndex = 0;
    double timestampSec = 0.0;
    std::string imageRef;

    bool operator==(const FrameRecord&) const = default;
};

enum class Task { classification, detection };

std::string_view to_string(Task task);
Task task_from_string(std::string_view text);

struct ModelDescriptor {
    std::string modelId;
    std::string name;
    Task task = Task::classification;
    std::vector<std::string> classes;

    bool operator==(const ModelDescriptor&) const = default;

    /// Position of `cls` in `classes`, or nullopt.
    std::optional<std::size_t> class_index(std::string_view cls) const;
};

/// Inclusive frameIndex interval.
struct IndexRange {
    std::int64_t first = 0;
    std::int64_t last = 0;

    bool contains(std::int64_t index) const { return first <= index && index <= last; }
    bool operator==(const IndexRange&) const = default;
};

struct Rejection {
    std::size_t line = 0;  // 1-based; 0 when not line-oriented
    std::string key;       // frameId or other record key, when recoverable
    std::string reason;

    bool operator==(const Rejection&) const = default;
};

struct IngestReport {
    std::size_t accepted = 0;
    std::vector<Rejection> rejected;
};

void to_json(nlohmann::json& j, const VideoRecord& v);
void from_json(const nlohmann::json& j, VideoRecord& v);
void to_json(nlohmann::json& j, const FrameRecord& f);
void from_json(const nlohmann::json& j, FrameRecord& f);
void to_json(nlohmann::json& j, const ModelDescriptor& m);
void from_json(const nlohmann::json& j, ModelDescriptor& m);
void to_json(nlohmann::json& j, const IndexRange& r);
void to_json(nlohmann::json& j, const Rejection& r);
void to_json(nlohmann::json& j, const IngestReport& r);

/// Throws Error(validation) when the descriptor breaks its invariants.
void validate(const ModelDescriptor& model);

/// Videos, frames and registered models. Frames are kept ordered by
/// (videoId, frameIndex); a frame's position in that order is its ordinal,
/// which other modules use to address per-frame columns.
///
/// A Catalog is a plain value. The store copies it before mutating and then
/// publishes the copy, so a `const Catalog&` obtained from a snapshot never
/// changes.
class Catalog {
public:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    /// Frame manifest ingestion (JSON Lines). Relative imagePath values are
    /// resolved against `base_dir` when it is non-empty.
    IngestReport ingest_frames(std::istream& manifest, const std::filesystem::path& base_dir = {});

    /// Validates and stores one frame. Returns false for an identical
    /// re-insert, true for a new frame; throws Error(validation|conflict)
    /// naming the broken rule otherwise.
    bool insert_frame(const FrameRecord& frame);

    /// Adds a video with no frames yet, or renames an existing one.
    void register_video(const std::string& videoId, const std::string& name);

    ModelDescriptor register_model(const ModelDescriptor& model);

    std::vector<VideoRecord> videos() const;
    std::optional<VideoRecord> video(std::string_view videoId) const;
    std::vector<ModelDescriptor> models() const;
    const ModelDescriptor* model(std::string_view modelId) const;

    /// Throws Error(not_found) for an unknown video.
    std::vector<FrameRecord> list_frames(std::string_view videoId,
                                         std::optional<IndexRange> range = std::nullopt) const;

    const FrameRecord* frame(std::string_view frameId) const;
    std::size_t ordinal(std::string_view frameId) const;

    std::span<const FrameRecord> frames() const { return frames_; }
    std::size_t frame_count() const { return frames_.size(); }

    /// Ordinal span [begin, end) of a video's frames, or nullopt.
    std::optional<std::pair<std::size_t, std::size_t>> video_span(std::string_view videoId) const;

    bool operator==(const Catalog& other) const;

private:
    void rebuild_index();

    struct VideoEntry {
        std::string name;
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    std::vector<FrameRecord> frames_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::map<std::string, VideoEntry, std::less<>> videos_;
    std::map<std::string, ModelDescriptor, std::less<>> models_;
};

}  // namespace framesmith
