#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "framesmith/catalog.hpp"
#include "framesmith/predictions.hpp"
#include "framesmith/query.hpp"

namespace framesmith {
struct Snapshot;
}

namespace framesmith::analytics {

enum class Metric { top_score, score, max_score, count };

/// One scatterplot axis: a per-frame metric of one model.
struct AxisSpec {
    std::string modelId;
    Metric metric = Metric::top_score;
    std::string cls;  // empty for topScore

    bool operator==(const AxisSpec&) const = default;
};

/// Parses `model.topScore`, `model.score[class]`, `model.maxScore[class]` or
/// `model.count[class]` (model and class may be double-quoted).
AxisSpec parse_axis(std::string_view text);
std::string to_string(const AxisSpec& axis);

/// Throws Error(validation | task_mismatch) when the axis is illegal for its
/// model.
void validate_axis(const AxisSpec& axis, const Catalog& catalog);

struct TimelineBin {
    std::int64_t binIndex = 0;
    std::int64_t frameIndexStart = 0;
    std::int64_t frameIndexEnd = 0;  // inclusive
    std::int64_t frameCount = 0;
    std::int64_t predictedCount = 0;
    std::optional<std::string> dominantClass;
    std::optional<double> meanTopScore;
    std::map<std::string, std::int64_t> classHistogram;

    bool operator==(const TimelineBin&) const = default;
};

struct TimelineSeries {
    std::string modelId;
    std::vector<TimelineBin> bins;

    bool operator==(const TimelineSeries&) const = default;
};

struct TimelineStack {
    std::string videoId;
    std::int64_t binCount = 0;
    std::vector<TimelineSeries> series;
};

inline constexpr std::size_t max_stacked_series = 3;

/// Splits the video's frameIndex range [min, max] into `binCount` contiguous
/// intervals whose widths differ by at most one and summarizes each one.
std::vector<TimelineBin> build_timeline(const Snapshot& snap, const std::string& modelId,
                                        const std::string& videoId, std::int64_t binCount);

TimelineStack stack_timelines(const Snapshot& snap, const std::vector<std::string>& modelIds,
                              const std::string& videoId, std::int64_t binCount);

struct ScatterPoint {
    std::string frameId;
    double x = 0;
    double y = 0;

    bool operator==(const ScatterPoint&) const = default;
};

/// Value of an axis metric for one frame; nullopt when the model has no
/// prediction for it (or, for score[c], no score for c).
std::optional<double> axis_value(const Snapshot& snap, const AxisSpec& axis, std::size_t ordinal);

/// One point per frame (passing the filter, if any) where both metrics are
/// defined, in catalog order or the filter's order.
std::vector<ScatterPoint> project_scatter(const Snapshot& snap, const AxisSpec& x, const AxisSpec& y,
                                          const query::CheckedQuery* filter = nullptr);

inline constexpr double default_band_low = 0.4;
inline constexpr double default_band_high = 0.7;

struct ScoredFrame {
    FrameRecord frame;
    std::string topClass;
    double topScore = 0;
};

/// Frames with low < topScore < high, ordered by topScore then frameId.
std::vector<ScoredFrame> find_borderline(const Snapshot& snap, const std::string& modelId,
                                         double low = default_band_low, double high = default_band_high,
                                         const std::optional<std::string>& videoId = std::nullopt);

enum class DisagreementMode { absence_vs_presence, presence_vs_absence };

struct DisagreementSpec {
    std::string classifierModel;
    std::string absenceClass;
    std::string detectorModel;
    std::string objectClass;
    double detectorThreshold = 0.5;
    DisagreementMode mode = DisagreementMode::absence_vs_presence;
};

struct Disagreement {
    FrameRecord frame;
    ClassificationPrediction classifier;
    DetectionPrediction detector;
    double objectMaxScore = 0;  // detector maxScore[objectClass], 0 when absent
};

std::vector<Disagreement> find_disagreements(const Snapshot& snap, const DisagreementSpec& spec,
                                             const std::optional<std::string>& videoId = std::nullopt);

struct FlickerConfig {
    std::int64_t windowSize = 5;
    std::int64_t minChanges = 2;
};

/// Slides a window of `windowSize` consecutive predicted frames over the
/// video; windows whose adjacent-topClass changes reach `minChanges` are
/// flagged and overlapping flagged windows merge. Intervals are in
/// frameIndex units, inclusive.
std::vector<IndexRange> detect_flicker(const Snapshot& snap, const std::string& modelId,
                                       const std::string& videoId, const FlickerConfig& config = {});

/// The same rule over a bare topClass sequence; intervals are positions.
std::vector<IndexRange> flicker_positions(const std::vector<std::int32_t>& classes, const FlickerConfig& config);

void to_json(nlohmann::json& j, const AxisSpec& a);
void to_json(nlohmann::json& j, const TimelineBin& b);
void from_json(const nlohmann::json& j, TimelineBin& b);
void to_json(nlohmann::json& j, const TimelineStack& s);
void to_json(nlohmann::json& j, const ScatterPoint& p);
void from_json(const nlohmann::json& j, ScatterPoint& p);
void to_json(nlohmann::json& j, const ScoredFrame& s);
void to_json(nlohmann::json& j, const Disagreement& d);

std::string_view to_string(DisagreementMode mode);
DisagreementMode disagreement_mode_from_string(std::string_view text);

}  // namespace framesmith::analytics
