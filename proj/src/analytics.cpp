#include "framesmith/analytics.hpp"

#include <algorithm>
#include <cmath>

#include "framesmith/error.hpp"
#include "framesmith/store.hpp"

namespace framesmith::analytics {

using nlohmann::json;

namespace {

const ModelDescriptor& require_model(const Snapshot& snap, const std::string& modelId, Task task) {
    const ModelDescriptor* m = snap.catalog->model(modelId);
    if (!m) throw Error(ErrorCode::not_found, "unknown model '" + modelId + "'", json{{"modelId", modelId}});
    if (m->task != task)
        throw Error(ErrorCode::task_mismatch,
                    "model '" + modelId + "' is a " + std::string(framesmith::to_string(m->task)) + " model; " +
                        std::string(framesmith::to_string(task)) + " required",
                    json{{"modelId", modelId}});
    return *m;
}

std::pair<std::size_t, std::size_t> require_video(const Snapshot& snap, const std::string& videoId) {
    auto span = snap.catalog->video_span(videoId);
    if (!span) throw Error(ErrorCode::not_found, "unknown video '" + videoId + "'", json{{"videoId", videoId}});
    return *span;
}

std::pair<std::size_t, std::size_t> scan_range(const Snapshot& snap, const std::optional<std::string>& videoId) {
    if (videoId) return require_video(snap, *videoId);
    return {0, snap.catalog->frame_count()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Axes

AxisSpec parse_axis(std::string_view text) {
    query::FieldRef f = query::parse_field(text);
    AxisSpec axis;
    axis.modelId = f.model;
    axis.cls = f.cls;
    switch (f.kind) {
    case query::FieldKind::top_score: axis.metric = Metric::top_score; break;
    case query::FieldKind::score: axis.metric = Metric::score; break;
    case query::FieldKind::max_score: axis.metric = Metric::max_score; break;
    case query::FieldKind::count: axis.metric = Metric::count; break;
    default:
        throw Error(ErrorCode::validation, "'" + std::string(text) + "' is not a numeric model metric",
                    json{{"axis", text}});
    }
    return axis;
}

namespace {

query::FieldRef as_field(const AxisSpec& axis) {
    query::FieldRef f;
    f.model = axis.modelId;
    f.cls = axis.cls;
    switch (axis.metric) {
    case Metric::top_score: f.kind = query::FieldKind::top_score; break;
    case Metric::score: f.kind = query::FieldKind::score; break;
    case Metric::max_score: f.kind = query::FieldKind::max_score; break;
    case Metric::count: f.kind = query::FieldKind::count; break;
    }
    return f;
}

}  // namespace

std::string to_string(const AxisSpec& axis) { return query::pretty_print(as_field(axis)); }

void validate_axis(const AxisSpec& axis, const Catalog& catalog) {
    if (axis.metric != Metric::top_score && axis.cls.empty())
        throw Error(ErrorCode::validation, "axis metric needs a class", json{{"axis", to_string(axis)}});
    query::check_field(as_field(axis), catalog);
}

std::optional<double> axis_value(const Snapshot& snap, const AxisSpec& axis, std::size_t ordinal) {
    const PredictionTable* t = snap.table(axis.modelId);
    if (!t) return std::nullopt;
    std::int32_t slot = t->slot(ordinal);
    if (slot == PredictionTable::none) return std::nullopt;
    std::size_t cls = axis.cls.empty() ? 0 : t->model().class_index(axis.cls).value_or(0);
    switch (axis.metric) {
    case Metric::top_score: return t->top_score(slot);
    case Metric::score: {
        double s = t->score(slot, cls);
        return std::isnan(s) ? std::nullopt : std::optional<double>(s);
    }
    case Metric::max_score: return t->max_score(slot, cls);
    case Metric::count: return static_cast<double>(t->count(slot, cls));
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Timeline

std::vector<TimelineBin> build_timeline(const Snapshot& snap, const std::string& modelId,
                                        const std::string& videoId, std::int64_t binCount) {
    const ModelDescriptor& model = require_model(snap, modelId, Task::classification);
    auto [begin, end] = require_video(snap, videoId);
    const auto frame_count = static_cast<std::int64_t>(end - begin);
    if (binCount <= 0) throw Error(ErrorCode::validation, "bins must be positive", json{{"bins", binCount}});
    if (binCount > frame_count)
        throw Error(ErrorCode::validation, "bins exceeds the video's frame count",
                    json{{"bins", binCount}, {"frameCount", frame_count}});

    const auto frames = snap.catalog->frames();
    const PredictionTable& table = *snap.table(modelId);
    const std::int64_t lo = frames[begin].frameIndex;
    const std::int64_t span = frames[end - 1].frameIndex - lo + 1;

    std::vector<TimelineBin> bins(static_cast<std::size_t>(binCount));
    std::vector<double> score_sums(bins.size(), 0.0);
    for (std::int64_t i = 0; i < binCount; ++i) {
        auto& b = bins[static_cast<std::size_t>(i)];
        b.binIndex = i;
        b.frameIndexStart = lo + i * span / binCount;
        b.frameIndexEnd = lo + (i + 1) * span / binCount - 1;
    }

    std::size_t bin = 0;
    for (std::size_t ord = begin; ord < end; ++ord) {
        while (frames[ord].frameIndex > bins[bin].frameIndexEnd) ++bin;
        TimelineBin& b = bins[bin];
        ++b.frameCount;
        std::int32_t slot = table.slot(ord);
        if (slot == PredictionTable::none) continue;
        ++b.predictedCount;
        ++b.classHistogram[model.classes[static_cast<std::size_t>(table.top_class(slot))]];
        score_sums[bin] += table.top_score(slot);
    }

    for (std::size_t i = 0; i < bins.size(); ++i) {
        TimelineBin& b = bins[i];
        if (b.predictedCount == 0) continue;
        b.meanTopScore = score_sums[i] / static_cast<double>(b.predictedCount);
        std::int64_t best = 0;
        for (const auto& [cls, n] : b.classHistogram) {
            if (n > best) {
                best = n;
                b.dominantClass = cls;
            }
        }
    }
    return bins;
}

TimelineStack stack_timelines(const Snapshot& snap, const std::vector<std::string>& modelIds,
                              const std::string& videoId, std::int64_t binCount) {
    if (modelIds.empty()) throw Error(ErrorCode::validation, "at least one model is required");
    if (modelIds.size() > max_stacked_series)
        throw Error(ErrorCode::validation, "stack limit is 3", json{{"models", modelIds.size()}});
    TimelineStack stack;
    stack.videoId = videoId;
    stack.binCount = binCount;
    for (const auto& id : modelIds) stack.series.push_back({id, build_timeline(snap, id, videoId, binCount)});
    return stack;
}

// ---------------------------------------------------------------------------
// Scatter

std::vector<ScatterPoint> project_scatter(const Snapshot& snap, const AxisSpec& x, const AxisSpec& y,
                                          const query::CheckedQuery* filter) {
    validate_axis(x, *snap.catalog);
    validate_axis(y, *snap.catalog);
    std::vector<ScatterPoint> out;
    const auto frames = snap.catalog->frames();
    auto emit = [&](std::size_t ord) {
        auto xv = axis_value(snap, x, ord);
        if (!xv) return;
        auto yv = axis_value(snap, y, ord);
        if (!yv) return;
        out.push_back({frames[ord].frameId, *xv, *yv});
    };
    if (filter) {
        for (std::size_t ord : query::select(snap, *filter)) emit(ord);
    } else {
        for (std::size_t ord = 0; ord < frames.size(); ++ord) emit(ord);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mining

std::vector<ScoredFrame> find_borderline(const Snapshot& snap, const std::string& modelId, double low, double high,
                                         const std::optional<std::string>& videoId) {
    require_model(snap, modelId, Task::classification);
    if (!(low < high))
        throw Error(ErrorCode::validation, "low must be below high", json{{"low", low}, {"high", high}});
    const PredictionTable& table = *snap.table(modelId);
    const auto frames = snap.catalog->frames();
    auto [begin, end] = scan_range(snap, videoId);

    std::vector<ScoredFrame> out;
    for (std::size_t ord = begin; ord < end; ++ord) {
        std::int32_t slot = table.slot(ord);
        if (slot == PredictionTable::none) continue;
        double s = table.top_score(slot);
        if (low < s && s < high)
            out.push_back({frames[ord], table.model().classes[static_cast<std::size_t>(table.top_class(slot))], s});
    }
    std::sort(out.begin(), out.end(), [](const ScoredFrame& a, const ScoredFrame& b) {
        if (a.topScore != b.topScore) return a.topScore < b.topScore;
        return a.frame.frameId < b.frame.frameId;
    });
    return out;
}

std::vector<Disagreement> find_disagreements(const Snapshot& snap, const DisagreementSpec& spec,
                                             const std::optional<std::string>& videoId) {
    const ModelDescriptor& clf = require_model(snap, spec.classifierModel, Task::classification);
    const ModelDescriptor& det = require_model(snap, spec.detectorModel, Task::detection);
    auto absence = clf.class_index(spec.absenceClass);
    if (!absence)
        throw Error(ErrorCode::validation, "absenceClass '" + spec.absenceClass + "' is not declared on " + clf.modelId,
                    json{{"class", spec.absenceClass}});
    auto object = det.class_index(spec.objectClass);
    if (!object)
        throw Error(ErrorCode::validation, "objectClass '" + spec.objectClass + "' is not declared on " + det.modelId,
                    json{{"class", spec.objectClass}});
    if (!(spec.detectorThreshold >= 0.0 && spec.detectorThreshold <= 1.0))
        throw Error(ErrorCode::validation, "detector threshold must lie in [0,1]",
                    json{{"threshold", spec.detectorThreshold}});

    const PredictionTable& ct = *snap.table(clf.modelId);
    const PredictionTable& dt = *snap.table(det.modelId);
    const auto frames = snap.catalog->frames();
    auto [begin, end] = scan_range(snap, videoId);
    const auto absence_idx = static_cast<std::int32_t>(*absence);

    std::vector<Disagreement> out;
    for (std::size_t ord = begin; ord < end; ++ord) {
        std::int32_t cs = ct.slot(ord);
        std::int32_t ds = dt.slot(ord);
        if (cs == PredictionTable::none || ds == PredictionTable::none) continue;
        const bool says_absent = ct.top_class(cs) == absence_idx;
        const bool detected = dt.count(ds, *object) > 0;
        const double max_score = dt.max_score(ds, *object);
        bool flagged = spec.mode == DisagreementMode::absence_vs_presence
                           ? says_absent && detected && max_score >= spec.detectorThreshold
                           : !says_absent && (!detected || max_score < spec.detectorThreshold);
        if (!flagged) continue;
        out.push_back({frames[ord], ct.classifications()[static_cast<std::size_t>(cs)],
                       dt.detections()[static_cast<std::size_t>(ds)], max_score});
    }
    const bool by_detector = spec.mode == DisagreementMode::absence_vs_presence;
    std::sort(out.begin(), out.end(), [&](const Disagreement& a, const Disagreement& b) {
        double ka = by_detector ? a.objectMaxScore : a.classifier.topScore;
        double kb = by_detector ? b.objectMaxScore : b.classifier.topScore;
        if (ka != kb) return ka > kb;
        return a.frame.frameId < b.frame.frameId;
    });
    return out;
}

std::vector<IndexRange> flicker_positions(const std::vector<std::int32_t>& classes, const FlickerConfig& config) {
    if (config.windowSize < 2) throw Error(ErrorCode::validation, "window size must be at least 2");
    if (config.minChanges < 1 || config.minChanges > config.windowSize - 1)
        throw Error(ErrorCode::validation, "minChanges must lie in [1, window size - 1]");
    const auto w = static_cast<std::size_t>(config.windowSize);
    if (classes.size() < w)
        throw Error(ErrorCode::validation, "insufficient frames",
                    json{{"predicted", classes.size()}, {"windowSize", config.windowSize}});

    // changes[i] = 1 when positions i and i+1 differ; a window starting at p
    // covers changes[p .. p+w-2].
    std::int64_t in_window = 0;
    for (std::size_t i = 0; i + 1 < w; ++i) in_window += classes[i] != classes[i + 1];

    std::vector<IndexRange> out;
    for (std::size_t p = 0;; ++p) {
        if (in_window >= config.minChanges) {
            auto first = static_cast<std::int64_t>(p);
            auto last = static_cast<std::int64_t>(p + w - 1);
            if (!out.empty() && first <= out.back().last)
                out.back().last = last;
            else
                out.push_back({first, last});
        }
        if (p + w >= classes.size()) break;
        in_window -= classes[p] != classes[p + 1];
        in_window += classes[p + w - 1] != classes[p + w];
    }
    return out;
}

std::vector<IndexRange> detect_flicker(const Snapshot& snap, const std::string& modelId, const std::string& videoId,
                                       const FlickerConfig& config) {
    require_model(snap, modelId, Task::classification);
    auto [begin, end] = require_video(snap, videoId);
    const PredictionTable& table = *snap.table(modelId);
    const auto frames = snap.catalog->frames();

    std::vector<std::int32_t> classes;
    std::vector<std::int64_t> indices;
    for (std::size_t ord = begin; ord < end; ++ord) {
        std::int32_t slot = table.slot(ord);
        if (slot == PredictionTable::none) continue;
        classes.push_back(table.top_class(slot));
        indices.push_back(frames[ord].frameIndex);
    }
    auto ranges = flicker_positions(classes, config);
    for (auto& r : ranges) {
        r.first = indices[static_cast<std::size_t>(r.first)];
        r.last = indices[static_cast<std::size_t>(r.last)];
    }
    return ranges;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const AxisSpec& a) { j = to_string(a); }

namespace {

json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void to_json(json& j, const TimelineBin& b) {
    j = json{{"binIndex", b.binIndex},
             {"frameIndexStart", b.frameIndexStart},
             {"frameIndexEnd", b.frameIndexEnd},
             {"frameCount", b.frameCount},
             {"predictedCount", b.predictedCount},
             {"dominantClass", optional_json(b.dominantClass)},
             {"meanTopScore", optional_json(b.meanTopScore)},
             {"classHistogram", b.classHistogram}};
}

void from_json(const json& j, TimelineBin& b) {
    j.at("binIndex").get_to(b.binIndex);
    j.at("frameIndexStart").get_to(b.frameIndexStart);
    j.at("frameIndexEnd").get_to(b.frameIndexEnd);
    j.at("frameCount").get_to(b.frameCount);
    j.at("predictedCount").get_to(b.predictedCount);
    const json& dc = j.at("dominantClass");
    b.dominantClass = dc.is_null() ? std::nullopt : std::optional<std::string>(dc.get<std::string>());
    const json& ms = j.at("meanTopScore");
    b.meanTopScore = ms.is_null() ? std::nullopt : std::optional<double>(ms.get<double>());
    j.at("classHistogram").get_to(b.classHistogram);
}

void to_json(json& j, const TimelineStack& s) {
    json series = json::array();
    for (const auto& entry : s.series) series.push_back({{"modelId", entry.modelId}, {"bins", entry.bins}});
    j = json{{"videoId", s.videoId}, {"binCount", s.binCount}, {"series", series}};
}

void to_json(json& j, const ScatterPoint& p) { j = json{{"frameId", p.frameId}, {"x", p.x}, {"y", p.y}}; }

void from_json(const json& j, ScatterPoint& p) {
    j.at("frameId").get_to(p.frameId);
    j.at("x").get_to(p.x);
    j.at("y").get_to(p.y);
}

void to_json(json& j, const ScoredFrame& s) {
    j = json{{"frame", s.frame}, {"topClass", s.topClass}, {"topScore", s.topScore}};
}

void to_json(json& j, const Disagreement& d) {
    j = json{{"frame", d.frame},
             {"evidence", {{"classifier", d.classifier}, {"detector", d.detector}, {"objectMaxScore", d.objectMaxScore}}}};
}

std::string_view to_string(DisagreementMode mode) {
    return mode == DisagreementMode::absence_vs_presence ? "absenceVsPresence" : "presenceVsAbsence";
}

DisagreementMode disagreement_mode_from_string(std::string_view text) {
    if (text == "absenceVsPresence") return DisagreementMode::absence_vs_presence;
    if (text == "presenceVsAbsence") return DisagreementMode::presence_vs_absence;
    throw Error(ErrorCode::validation, "unknown disagreement mode '" + std::string(text) + "'",
                json{{"mode", text}});
}

}  // namespace framesmith::analytics
