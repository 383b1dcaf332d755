#include "framesmith/session.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "framesmith/error.hpp"

namespace framesmith {

using nlohmann::json;

void to_json(json& j, const CaptureItem& c) {
    j = json{{"captureId", c.captureId}, {"frameId", c.frameId}, {"reasonTag", c.reasonTag},
             {"createdAt", c.createdAt}};
    j["note"] = c.note ? json(*c.note) : json(nullptr);
    j["modelId"] = c.modelId ? json(*c.modelId) : json(nullptr);
}

void from_json(const json& j, CaptureItem& c) {
    j.at("captureId").get_to(c.captureId);
    j.at("frameId").get_to(c.frameId);
    j.at("reasonTag").get_to(c.reasonTag);
    j.at("createdAt").get_to(c.createdAt);
    auto opt = [&](const char* key) -> std::optional<std::string> {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) return std::nullopt;
        return it->get<std::string>();
    };
    c.note = opt("note");
    c.modelId = opt("modelId");
}

void to_json(json& j, const LabelAssignment& l) {
    j = json{{"modelId", l.modelId}, {"frameId", l.frameId}, {"class", l.cls}, {"assignedAt", l.assignedAt}};
}

void from_json(const json& j, LabelAssignment& l) {
    j.at("modelId").get_to(l.modelId);
    j.at("frameId").get_to(l.frameId);
    j.at("class").get_to(l.cls);
    j.at("assignedAt").get_to(l.assignedAt);
}

void to_json(json& j, const TagSummary& t) {
    j = json{{"captures", t.captures}, {"distinctFrames", t.distinctFrames}};
}

void to_json(json& j, const CaptureListing& l) {
    j = json{{"items", l.items}, {"byTag", l.byTag}, {"distinctTags", l.byTag.size()}};
}

namespace {

const ModelDescriptor& classification_model(const Catalog& catalog, const std::string& modelId) {
    const ModelDescriptor* m = catalog.model(modelId);
    if (!m) throw Error(ErrorCode::not_found, "unknown model '" + modelId + "'", json{{"modelId", modelId}});
    if (m->task != Task::classification)
        throw Error(ErrorCode::task_mismatch, "labels can only be assigned for classification models",
                    json{{"modelId", modelId}});
    return *m;
}

std::string capture_id(std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "cap-%08llu", static_cast<unsigned long long>(n));
    return buf;
}

}  // namespace

CaptureItem SessionState::capture(const Catalog& catalog, const std::string& frameId,
                                  const std::string& reasonTag, const std::optional<std::string>& modelId,
                                  const std::optional<std::string>& note, std::int64_t now_ms) {
    if (!catalog.frame(frameId))
        throw Error(ErrorCode::not_found, "unknown frame '" + frameId + "'", json{{"frameId", frameId}});
    if (reasonTag.find_first_not_of(" \t\r\n") == std::string::npos)
        throw Error(ErrorCode::validation, "reasonTag must not be empty", json{{"field", "reasonTag"}});
    if (modelId && !catalog.model(*modelId))
        throw Error(ErrorCode::not_found, "unknown model '" + *modelId + "'", json{{"modelId", *modelId}});

    for (const auto& c : captures_)
        if (c.frameId == frameId && c.reasonTag == reasonTag && c.modelId == modelId) return c;

    CaptureItem item{capture_id(next_capture_++), frameId, reasonTag, note, now_ms, modelId};
    captures_.push_back(item);
    return item;
}

LabelAssignment SessionState::assign_label(const Catalog& catalog, const std::string& modelId,
                                           const std::string& frameId, const std::string& cls,
                                           std::int64_t now_ms) {
    const ModelDescriptor& m = classification_model(catalog, modelId);
    if (!catalog.frame(frameId))
        throw Error(ErrorCode::not_found, "unknown frame '" + frameId + "'", json{{"frameId", frameId}});
    if (!m.class_index(cls))
        throw Error(ErrorCode::validation, "undeclared class", json{{"class", cls}, {"modelId", modelId}});
    LabelAssignment label{modelId, frameId, cls, now_ms};
    labels_.insert_or_assign({modelId, frameId}, label);
    return label;
}

LabelExport SessionState::export_labels(const Catalog& catalog, const std::string& modelId) const {
    const ModelDescriptor& m = classification_model(catalog, modelId);
    LabelExport out;
    for (const auto& c : m.classes) out.summary[c] = 0;

    std::vector<std::pair<std::size_t, const LabelAssignment*>> rows;
    for (auto it = labels_.lower_bound(std::make_pair(modelId, std::string()));
         it != labels_.end() && it->first.first == modelId; ++it) {
        rows.emplace_back(catalog.ordinal(it->second.frameId), &it->second);
    }
    // Catalog ordinals already follow (videoId, frameIndex).
    std::sort(rows.begin(), rows.end());

    std::ostringstream lines;
    for (const auto& [ord, label] : rows) {
        lines << json{{"imagePath", catalog.frames()[ord].imageRef}, {"class", label->cls}}.dump() << '\n';
        ++out.summary[label->cls];
        ++out.total;
    }
    out.jsonl = lines.str();
    return out;
}

IngestReport SessionState::import_labels(const Catalog& catalog, const std::string& modelId, std::istream& in,
                                         std::int64_t now_ms) {
    classification_model(catalog, modelId);
    std::unordered_map<std::string, std::size_t> by_path;
    std::set<std::string> ambiguous;
    const auto frames = catalog.frames();
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (!by_path.emplace(frames[i].imageRef, i).second) ambiguous.insert(frames[i].imageRef);

    IngestReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string path;
        try {
            json j = json::parse(line);
            path = j.at("imagePath").get<std::string>();
            auto cls = j.at("class").get<std::string>();
            if (ambiguous.count(path)) throw Error(ErrorCode::validation, "imagePath matches several frames");
            auto it = by_path.find(path);
            if (it == by_path.end()) throw Error(ErrorCode::validation, "unknown imagePath");
            assign_label(catalog, modelId, frames[it->second].frameId, cls, now_ms);
            ++report.accepted;
        } catch (const Error& e) {
            report.rejected.push_back({line_no, path, e.what()});
        } catch (const json::exception&) {
            report.rejected.push_back({line_no, path, "malformed label record"});
        }
    }
    return report;
}

std::size_t SessionState::clear_labels(const std::string& modelId) {
    std::size_t removed = 0;
    for (auto it = labels_.begin(); it != labels_.end();) {
        if (it->first.first == modelId) {
            it = labels_.erase(it);
            ++removed;
        } else {
            ++it;
        }
    }
    return removed;
}

CaptureListing SessionState::list_captures(const CaptureFilter& filter) const {
    CaptureListing out;
    for (const auto& c : captures_) {
        if (filter.reasonTag && c.reasonTag != *filter.reasonTag) continue;
        if (filter.modelId && c.modelId != filter.modelId) continue;
        out.items.push_back(c);
    }
    std::stable_sort(out.items.begin(), out.items.end(), [](const CaptureItem& a, const CaptureItem& b) {
        if (a.createdAt != b.createdAt) return a.createdAt < b.createdAt;
        return a.captureId < b.captureId;
    });
    std::map<std::string, std::set<std::string>> frames_by_tag;
    for (const auto& c : out.items) {
        ++out.byTag[c.reasonTag].captures;
        frames_by_tag[c.reasonTag].insert(c.frameId);
    }
    for (auto& [tag, s] : out.byTag) s.distinctFrames = static_cast<std::int64_t>(frames_by_tag[tag].size());
    return out;
}

const LabelAssignment* SessionState::label(std::string_view modelId, std::string_view frameId) const {
    auto it = labels_.find(std::make_pair(std::string(modelId), std::string(frameId)));
    return it == labels_.end() ? nullptr : &it->second;
}

std::vector<LabelAssignment> SessionState::labels() const {
    std::vector<LabelAssignment> out;
    out.reserve(labels_.size());
    for (const auto& [key, l] : labels_) out.push_back(l);
    return out;
}

void SessionState::restore(std::vector<CaptureItem> captures, std::vector<LabelAssignment> labels) {
    captures_ = std::move(captures);
    labels_.clear();
    for (auto& l : labels) {
        auto key = std::make_pair(l.modelId, l.frameId);
        labels_.insert_or_assign(std::move(key), std::move(l));
    }
    next_capture_ = 1;
    for (const auto& c : captures_) {
        unsigned long long n = 0;
        if (std::sscanf(c.captureId.c_str(), "cap-%llu", &n) == 1 && n >= next_capture_) next_capture_ = n + 1;
    }
}

}  // namespace framesmith
