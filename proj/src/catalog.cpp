#include "framesmith/catalog.hpp"

#include <algorithm>
#include <istream>
#include <set>
#include <sstream>

#include "framesmith/error.hpp"

namespace framesmith {

using nlohmann::json;

std::string_view to_string(Task task) {
    return task == Task::classification ? "classification" : "detection";
}

Task task_from_string(std::string_view text) {
    if (text == "classification") return Task::classification;
    if (text == "detection") return Task::detection;
    throw Error(ErrorCode::validation, "unknown task '" + std::string(text) + "'");
}

std::optional<std::size_t> ModelDescriptor::class_index(std::string_view cls) const {
    auto it = std::find(classes.begin(), classes.end(), cls);
    if (it == classes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - classes.begin());
}

void to_json(json& j, const VideoRecord& v) {
    j = json{{"videoId", v.videoId},
             {"name", v.name},
             {"frameCount", v.frameCount},
             {"durationSec", v.durationSec}};
}

void from_json(const json& j, VideoRecord& v) {
    j.at("videoId").get_to(v.videoId);
    j.at("name").get_to(v.name);
    j.at("frameCount").get_to(v.frameCount);
    j.at("durationSec").get_to(v.durationSec);
}

void to_json(json& j, const FrameRecord& f) {
    j = json{{"frameId", f.frameId},
             {"videoId", f.videoId},
             {"frameIndex", f.frameIndex},
             {"timestampSec", f.timestampSec},
             {"imagePath", f.imageRef}};
}

void from_json(const json& j, FrameRecord& f) {
    j.at("frameId").get_to(f.frameId);
    j.at("videoId").get_to(f.videoId);
    j.at("frameIndex").get_to(f.frameIndex);
    j.at("timestampSec").get_to(f.timestampSec);
    j.at("imagePath").get_to(f.imageRef);
}

void to_json(json& j, const ModelDescriptor& m) {
    j = json{{"modelId", m.modelId},
             {"name", m.name},
             {"task", to_string(m.task)},
             {"classes", m.classes}};
}

void from_json(const json& j, ModelDescriptor& m) {
    j.at("modelId").get_to(m.modelId);
    m.name = j.contains("name") ? j.at("name").get<std::string>() : m.modelId;
    m.task = task_from_string(j.at("task").get<std::string>());
    j.at("classes").get_to(m.classes);
}

void to_json(json& j, const IndexRange& r) { j = json{{"frameIndexStart", r.first}, {"frameIndexEnd", r.last}}; }

void to_json(json& j, const Rejection& r) {
    j = json{{"line", r.line}, {"key", r.key}, {"reason", r.reason}};
}

void to_json(json& j, const IngestReport& r) {
    j = json{{"accepted", r.accepted}, {"rejected", r.rejected}};
}

void validate(const ModelDescriptor& model) {
    if (model.modelId.empty()) throw Error(ErrorCode::validation, "modelId must not be empty");
    if (model.classes.empty())
        throw Error(ErrorCode::validation, "model '" + model.modelId + "' declares no classes",
                    json{{"modelId", model.modelId}});
    std::set<std::string_view> seen;
    for (const auto& c : model.classes) {
        if (c.empty())
            throw Error(ErrorCode::validation, "model '" + model.modelId + "' has an empty class name");
        if (!seen.insert(c).second)
            throw Error(ErrorCode::validation,
                        "model '" + model.modelId + "' declares class '" + c + "' twice");
    }
}

namespace {

// Per-video frameIndex -> timestampSec view used while validating a batch.
using VideoTimeline = std::map<std::int64_t, double>;

FrameRecord parse_manifest_line(const std::string& line, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::validation, "malformed JSON");
    }
    if (!j.is_object()) throw Error(ErrorCode::validation, "record is not an object");

    auto require = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end() || it->is_null())
            throw Error(ErrorCode::validation, std::string("missing field ") + key);
        return *it;
    };

    FrameRecord f;
    const json& vid = require("videoId");
    if (!vid.is_string() || vid.get<std::string>().empty())
        throw Error(ErrorCode::validation, "videoId must be a non-empty string");
    f.videoId = vid.get<std::string>();

    const json& idx = require("frameIndex");
    if (!idx.is_number_integer()) throw Error(ErrorCode::validation, "frameIndex must be an integer");
    f.frameIndex = idx.get<std::int64_t>();

    const json& ts = require("timestampSec");
    if (!ts.is_number()) throw Error(ErrorCode::validation, "timestampSec must be a number");
    f.timestampSec = ts.get<double>();

    const json& img = require("imagePath");
    if (!img.is_string() || img.get<std::string>().empty())
        throw Error(ErrorCode::validation, "imagePath must be a non-empty string");
    std::filesystem::path image = img.get<std::string>();
    if (image.is_relative() && !base_dir.empty()) image = (base_dir / image).lexically_normal();
    f.imageRef = image.string();

    if (auto it = j.find("frameId"); it != j.end() && !it->is_null()) {
        if (!it->is_string() || it->get<std::string>().empty())
            throw Error(ErrorCode::validation, "frameId must be a non-empty string");
        f.frameId = it->get<std::string>();
    } else {
        f.frameId = f.videoId + ":" + std::to_string(f.frameIndex);
    }
    return f;
}

}  // namespace

IngestReport Catalog::ingest_frames(std::istream& manifest, const std::filesystem::path& base_dir) {
    IngestReport report;
    std::vector<FrameRecord> pending;
    std::unordered_map<std::string, std::size_t> pending_by_id;
    std::map<std::string, VideoTimeline, std::less<>> timelines;

    auto timeline_for = [&](const std::string& videoId) -> VideoTimeline& {
        auto it = timelines.find(videoId);
        if (it != timelines.end()) return it->second;
        VideoTimeline t;
        if (auto span = video_span(videoId)) {
            for (std::size_t i = span->first; i < span->second; ++i)
                t.emplace(frames_[i].frameIndex, frames_[i].timestampSec);
        }
        return timelines.emplace(videoId, std::move(t)).first->second;
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        FrameRecord f;
        try {
            f = parse_manifest_line(line, base_dir);
        } catch (const Error& e) {
            report.rejected.push_back({line_no, {}, e.what()});
            continue;
        }

        auto reject = [&](std::string reason) {
            report.rejected.push_back({line_no, f.frameId, std::move(reason)});
        };
        if (f.frameIndex < 0) {
            reject("frameIndex<0");
            continue;
        }
        if (f.timestampSec < 0) {
            reject("timestampSec<0");
            continue;
        }

        const FrameRecord* existing = frame(f.frameId);
        if (!existing) {
            if (auto it = pending_by_id.find(f.frameId); it != pending_by_id.end())
                existing = &pending[it->second];
        }
        if (existing) {
            if (*existing != f) reject("duplicate frameId with different payload");
            continue;
        }

        VideoTimeline& timeline = timeline_for(f.videoId);
        if (timeline.count(f.frameIndex)) {
            reject("frameIndex already used in video");
            continue;
        }
        auto next = timeline.upper_bound(f.frameIndex);
        if (next != timeline.end() && next->second < f.timestampSec) {
            reject("timestampSec decreases in frameIndex");
            continue;
        }
        if (next != timeline.begin() && std::prev(next)->second > f.timestampSec) {
            reject("timestampSec decreases in frameIndex");
            continue;
        }

        timeline.emplace(f.frameIndex, f.timestampSec);
        pending_by_id.emplace(f.frameId, pending.size());
        pending.push_back(std::move(f));
    }

    if (!pending.empty()) {
        report.accepted = pending.size();
        for (auto& f : pending) {
            if (!videos_.count(f.videoId)) videos_.emplace(f.videoId, VideoEntry{f.videoId, 0, 0});
            frames_.push_back(std::move(f));
        }
        rebuild_index();
    }
    return report;
}

bool Catalog::insert_frame(const FrameRecord& frame) {
    std::string line = json(frame).dump();
    std::istringstream in(line);
    IngestReport report = ingest_frames(in);
    if (!report.rejected.empty()) {
        const auto& r = report.rejected.front();
        auto code = r.reason.rfind("duplicate", 0) == 0 || r.reason.rfind("frameIndex already", 0) == 0
                        ? ErrorCode::conflict
                        : ErrorCode::validation;
        throw Error(code, r.reason, json{{"frameId", frame.frameId}});
    }
    return report.accepted == 1;
}

void Catalog::register_video(const std::string& videoId, const std::string& name) {
    if (videoId.empty()) throw Error(ErrorCode::validation, "videoId must not be empty");
    auto it = videos_.find(videoId);
    if (it == videos_.end()) {
        videos_.emplace(videoId, VideoEntry{name.empty() ? videoId : name, 0, 0});
    } else if (!name.empty()) {
        it->second.name = name;
    }
}

ModelDescriptor Catalog::register_model(const ModelDescriptor& model) {
    validate(model);
    auto it = models_.find(model.modelId);
    if (it != models_.end()) {
        if (it->second != model)
            throw Error(ErrorCode::conflict,
                        "model '" + model.modelId + "' is already registered with a different descriptor",
                        json{{"modelId", model.modelId}});
        return it->second;
    }
    models_.emplace(model.modelId, model);
    return model;
}

std::vector<VideoRecord> Catalog::videos() const {
    std::vector<VideoRecord> out;
    out.reserve(videos_.size());
    for (const auto& [id, entry] : videos_) out.push_back(*video(id));
    return out;
}

std::optional<VideoRecord> Catalog::video(std::string_view videoId) const {
    auto it = videos_.find(videoId);
    if (it == videos_.end()) return std::nullopt;
    VideoRecord record;
    const VideoEntry& e = it->second;
    record.videoId = it->first;
    record.name = e.name;
    record.frameCount = static_cast<std::int64_t>(e.end - e.begin);
    record.durationSec = e.end > e.begin ? frames_[e.end - 1].timestampSec : 0.0;
    return record;
}

std::vector<ModelDescriptor> Catalog::models() const {
    std::vector<ModelDescriptor> out;
    out.reserve(models_.size());
    for (const auto& [id, m] : models_) out.push_back(m);
    return out;
}

const ModelDescriptor* Catalog::model(std::string_view modelId) const {
    auto it = models_.find(modelId);
    return it == models_.end() ? nullptr : &it->second;
}

std::vector<FrameRecord> Catalog::list_frames(std::string_view videoId,
                                              std::optional<IndexRange> range) const {
    auto it = videos_.find(videoId);
    if (it == videos_.end())
        throw Error(ErrorCode::not_found, "unknown video '" + std::string(videoId) + "'",
                    json{{"videoId", videoId}});
    auto first = frames_.begin() + static_cast<std::ptrdiff_t>(it->second.begin);
    auto last = frames_.begin() + static_cast<std::ptrdiff_t>(it->second.end);
    if (range) {
        auto by_index = [](const FrameRecord& f, std::int64_t idx) { return f.frameIndex < idx; };
        first = std::lower_bound(first, last, range->first, by_index);
        last = std::lower_bound(first, last, range->last + 1, by_index);
        if (range->last < range->first) last = first;
    }
    return {first, last};
}

const FrameRecord* Catalog::frame(std::string_view frameId) const {
    std::size_t ord = ordinal(frameId);
    return ord == npos ? nullptr : &frames_[ord];
}

std::size_t Catalog::ordinal(std::string_view frameId) const {
    auto it = by_id_.find(std::string(frameId));
    return it == by_id_.end() ? npos : it->second;
}

std::optional<std::pair<std::size_t, std::size_t>> Catalog::video_span(std::string_view videoId) const {
    auto it = videos_.find(videoId);
    if (it == videos_.end()) return std::nullopt;
    return std::make_pair(it->second.begin, it->second.end);
}

bool Catalog::operator==(const Catalog& other) const {
    if (frames_ != other.frames_ || models_ != other.models_) return false;
    if (videos_.size() != other.videos_.size()) return false;
    for (auto a = videos_.begin(), b = other.videos_.begin(); a != videos_.end(); ++a, ++b) {
        if (a->first != b->first || a->second.name != b->second.name ||
            a->second.begin != b->second.begin || a->second.end != b->second.end)
            return false;
    }
    return true;
}

void Catalog::rebuild_index() {
    std::sort(frames_.begin(), frames_.end(), [](const FrameRecord& a, const FrameRecord& b) {
        if (a.videoId != b.videoId) return a.videoId < b.videoId;
        return a.frameIndex < b.frameIndex;
    });
    by_id_.clear();
    by_id_.reserve(frames_.size());
    for (auto& [id, entry] : videos_) entry.begin = entry.end = 0;
    for (std::size_t i = 0; i < frames_.size(); ++i) {
        by_id_.emplace(frames_[i].frameId, i);
        VideoEntry& e = videos_.find(frames_[i].videoId)->second;
        if (i == 0 || frames_[i - 1].videoId != frames_[i].videoId) e.begin = i;
        e.end = i + 1;
    }
}

}  // namespace framesmith
