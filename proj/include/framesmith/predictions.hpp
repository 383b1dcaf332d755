#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "framesmith/catalog.hpp"

namespace framesmith {

struct ClassificationPrediction {
    std::string modelId;
    std::string frameId;
    std::map<std::string, double> scores;
    std::string topClass;
    double topScore = 0.0;

    bool operator==(const ClassificationPrediction&) const = default;
};

/// Normalized rectangle, 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const;
    bool operator==(const BBox&) const = default;
};

struct Detection {
    std::string cls;
    double score = 0.0;
    BBox bbox;

    bool operator==(const Detection&) const = default;
};

struct DetectionSummary {
    std::vector<std::string> classes;  // sorted, distinct
    std::map<std::string, std::int64_t> counts;
    std::map<std::string, double> maxScore;

    bool operator==(const DetectionSummary&) const = default;
};

struct DetectionPrediction {
    std::string modelId;
    std::string frameId;
    std::vector<Detection> detections;
    DetectionSummary summary;

    bool operator==(const DetectionPrediction&) const = default;
};

using Prediction = std::variant<ClassificationPrediction, DetectionPrediction>;

/// Argmax and max of a score map; ties go to the lexicographically smallest
/// class. Throws Error(validation) on an empty map or a score outside [0,1].
std::pair<std::string, double> derive_classification_summary(const std::map<std::string, double>& scores);

/// Throws Error(validation) naming the index of the first invalid detection.
DetectionSummary derive_detection_summary(const std::vector<Detection>& detections);

void to_json(nlohmann::json& j, const BBox& b);
void to_json(nlohmann::json& j, const Detection& d);
void to_json(nlohmann::json& j, const DetectionSummary& s);
void to_json(nlohmann::json& j, const ClassificationPrediction& p);
void to_json(nlohmann::json& j, const DetectionPrediction& p);

/// Raw prediction-file line (frameId plus scores or detections); derived
/// summaries are not written.
nlohmann::json to_record(const Prediction& p);

/// All predictions of one model, addressable by frameId and by catalog
/// ordinal. Like Catalog it is a value; the store copies before mutating.
///
/// Besides the records themselves the table keeps flat per-class columns
/// (scores, counts, maxScore) aligned with catalog ordinals so the query
/// evaluator and analytics can scan 10^5 frames without map lookups.
class PredictionTable {
public:
    static constexpr std::int32_t none = -1;

    PredictionTable() = default;
    explicit PredictionTable(ModelDescriptor model) : model_(std::move(model)) {}

    const ModelDescriptor& model() const { return model_; }
    std::size_t size() const { return by_frame_.size(); }

    /// Ingests a prediction file. Records are validated against the model
    /// and catalog; the stream is committed only if no line has the other
    /// task's shape (Error(task_mismatch) otherwise).
    IngestReport ingest(std::istream& records, const Catalog& catalog);

    /// Validates a raw record and derives its summary. Throws
    /// Error(task_mismatch) for the wrong record shape, Error(validation) for
    /// per-record problems.
    Prediction parse_record(const nlohmann::json& record, const Catalog& catalog) const;

    /// Inserts a validated prediction. Returns false for an identical
    /// re-insert; throws Error(conflict) for a different payload.
    bool insert(Prediction prediction, const Catalog& catalog);

    const ClassificationPrediction* classification(std::string_view frameId) const;
    const DetectionPrediction* detection(std::string_view frameId) const;

    /// Recomputes the ordinal columns after the catalog's frame set changed.
    void realign(const Catalog& catalog);

    // Column access by catalog ordinal. slot() is `none` without a prediction.
    std::int32_t slot(std::size_t ordinal) const { return slot_by_ordinal_[ordinal]; }
    std::size_t class_count() const { return model_.classes.size(); }
    std::int32_t top_class(std::int32_t slot) const { return top_class_[static_cast<std::size_t>(slot)]; }
    double top_score(std::int32_t slot) const { return top_score_[static_cast<std::size_t>(slot)]; }
    /// Per-class score (NaN when the class is absent from the score map).
    double score(std::int32_t slot, std::size_t cls) const { return values_[cell(slot, cls)]; }
    std::int64_t count(std::int32_t slot, std::size_t cls) const { return counts_[cell(slot, cls)]; }
    /// Per-class maxScore, 0 when the class was not detected.
    double max_score(std::int32_t slot, std::size_t cls) const { return values_[cell(slot, cls)]; }

    const std::vector<ClassificationPrediction>& classifications() const { return classifications_; }
    const std::vector<DetectionPrediction>& detections() const { return detections_; }

    /// Predictions in insertion order as raw records.
    void write_records(std::ostream& out) const;

    bool operator==(const PredictionTable& other) const;

private:
    std::size_t cell(std::int32_t slot, std::size_t cls) const {
        return static_cast<std::size_t>(slot) * model_.classes.size() + cls;
    }
    void append_columns(std::size_t index);

    ModelDescriptor model_;
    std::vector<ClassificationPrediction> classifications_;
    std::vector<DetectionPrediction> detections_;
    std::unordered_map<std::string, std::size_t> by_frame_;

    std::vector<std::int32_t> slot_by_ordinal_;
    std::vector<std::int32_t> top_class_;
    std::vector<double> top_score_;
    std::vector<double> values_;
    std::vector<std::int64_t> counts_;
};

}  // namespace framesmith
