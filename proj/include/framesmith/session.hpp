#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "framesmith/catalog.hpp"

namespace framesmith {

struct CaptureItem {
    std::string captureId;
    std::string frameId;
    std::string reasonTag;
    std::optional<std::string> note;
    std::int64_t createdAt = 0;  // milliseconds since the Unix epoch
    std::optional<std::string> modelId;

    bool operator==(const CaptureItem&) const = default;
};

struct LabelAssignment {
    std::string modelId;
    std::string frameId;
    std::string cls;
    std::int64_t assignedAt = 0;  // milliseconds since the Unix epoch

    bool operator==(const LabelAssignment&) const = default;
};

struct TagSummary {
    std::int64_t captures = 0;
    std::int64_t distinctFrames = 0;

    bool operator==(const TagSummary&) const = default;
};

struct CaptureListing {
    std::vector<CaptureItem> items;
    std::map<std::string, TagSummary> byTag;
};

struct CaptureFilter {
    std::optional<std::string> reasonTag;
    std::optional<std::string> modelId;
};

struct LabelExport {
    std::string jsonl;
    std::map<std::string, std::int64_t> summary;  // every declared class, zero included
    std::int64_t total = 0;
};

void to_json(nlohmann::json& j, const CaptureItem& c);
void from_json(const nlohmann::json& j, CaptureItem& c);
void to_json(nlohmann::json& j, const LabelAssignment& l);
void from_json(const nlohmann::json& j, LabelAssignment& l);
void to_json(nlohmann::json& j, const TagSummary& t);
void to_json(nlohmann::json& j, const CaptureListing& l);

/// Captures and labels of the single teaching session kept per data dir.
/// Timestamps are passed in so callers (and tests) control the clock.
class SessionState {
public:
    /// Returns the existing item when (frameId, reasonTag, modelId) was
    /// already captured.
    CaptureItem capture(const Catalog& catalog, const std::string& frameId, const std::string& reasonTag,
                        const std::optional<std::string>& modelId, const std::optional<std::string>& note,
                        std::int64_t now_ms);

    /// Stores or overwrites the label for (modelId, frameId).
    LabelAssignment assign_label(const Catalog& catalog, const std::string& modelId, const std::string& frameId,
                                 const std::string& cls, std::int64_t now_ms);

    /// JSON Lines of {"imagePath","class"} ordered by (videoId, frameIndex).
    LabelExport export_labels(const Catalog& catalog, const std::string& modelId) const;

    /// Reads an export file back. Each imagePath must identify exactly one
    /// frame; other lines are rejected individually.
    IngestReport import_labels(const Catalog& catalog, const std::string& modelId, std::istream& in,
                               std::int64_t now_ms);

    /// Removes every label of a model; returns how many were removed.
    std::size_t clear_labels(const std::string& modelId);

    CaptureListing list_captures(const CaptureFilter& filter = {}) const;

    const std::vector<CaptureItem>& captures() const { return captures_; }
    const LabelAssignment* label(std::string_view modelId, std::string_view frameId) const;
    std::vector<LabelAssignment> labels() const;

    /// Restores persisted records verbatim (used when loading a store).
    void restore(std::vector<CaptureItem> captures, std::vector<LabelAssignment> labels);

    bool operator==(const SessionState&) const = default;

private:
    std::vector<CaptureItem> captures_;
    std::map<std::pair<std::string, std::string>, LabelAssignment, std::less<>> labels_;
    std::uint64_t next_capture_ = 1;
};

}  // namespace framesmith
