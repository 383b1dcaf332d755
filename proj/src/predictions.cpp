#include "framesmith/predictions.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "framesmith/error.hpp"

namespace framesmith {

using nlohmann::json;

bool BBox::valid() const {
    return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
}

std::pair<std::string, double> derive_classification_summary(const std::map<std::string, double>& scores) {
    if (scores.empty()) throw Error(ErrorCode::validation, "empty scores");
    const std::string* best = nullptr;
    double best_score = 0.0;
    for (const auto& [cls, s] : scores) {
        if (!(s >= 0.0 && s <= 1.0))
            throw Error(ErrorCode::validation, "score out of range for class '" + cls + "'",
                        json{{"class", cls}});
        // std::map iterates in key order, so strict '>' keeps the smallest name on ties.
        if (!best || s > best_score) {
            best = &cls;
            best_score = s;
        }
    }
    return {*best, best_score};
}

DetectionSummary derive_detection_summary(const std::vector<Detection>& detections) {
    DetectionSummary out;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const Detection& d = detections[i];
        if (d.cls.empty())
            throw Error(ErrorCode::validation, "detection " + std::to_string(i) + " has no class",
                        json{{"index", i}});
        if (!(d.score >= 0.0 && d.score <= 1.0))
            throw Error(ErrorCode::validation, "detection " + std::to_string(i) + " score out of range",
                        json{{"index", i}});
        if (!d.bbox.valid())
            throw Error(ErrorCode::validation, "detection " + std::to_string(i) + " has an invalid bbox",
                        json{{"index", i}});
        auto [it, fresh] = out.maxScore.emplace(d.cls, d.score);
        if (!fresh && d.score > it->second) it->second = d.score;
        ++out.counts[d.cls];
    }
    for (const auto& [cls, n] : out.counts) out.classes.push_back(cls);
    return out;
}

void to_json(json& j, const BBox& b) { j = json::array({b.x0, b.y0, b.x1, b.y1}); }

void to_json(json& j, const Detection& d) {
    j = json{{"class", d.cls}, {"score", d.score}, {"bbox", d.bbox}};
}

void to_json(json& j, const DetectionSummary& s) {
    j = json{{"classes", s.classes}, {"counts", s.counts}, {"maxScore", s.maxScore}};
}

void to_json(json& j, const ClassificationPrediction& p) {
    j = json{{"modelId", p.modelId},
             {"frameId", p.frameId},
             {"scores", p.scores},
             {"topClass", p.topClass},
             {"topScore", p.topScore}};
}

void to_json(json& j, const DetectionPrediction& p) {
    j = json{{"modelId", p.modelId},
             {"frameId", p.frameId},
             {"detections", p.detections},
             {"classes", p.summary.classes},
             {"counts", p.summary.counts},
             {"maxScore", p.summary.maxScore}};
}

json to_record(const Prediction& p) {
    if (const auto* c = std::get_if<ClassificationPrediction>(&p))
        return json{{"frameId", c->frameId}, {"scores", c->scores}};
    const auto& d = std::get<DetectionPrediction>(p);
    return json{{"frameId", d.frameId}, {"detections", d.detections}};
}

namespace {

double number_field(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) throw Error(ErrorCode::validation, where + " needs numeric " + key);
    return it->get<double>();
}

Detection parse_detection(const json& j, std::size_t index) {
    std::string where = "detection " + std::to_string(index);
    if (!j.is_object()) throw Error(ErrorCode::validation, where + " is not an object");
    Detection d;
    auto cls = j.find("class");
    if (cls == j.end() || !cls->is_string()) throw Error(ErrorCode::validation, where + " needs a class");
    d.cls = cls->get<std::string>();
    d.score = number_field(j, "score", where);
    auto box = j.find("bbox");
    if (box == j.end() || !box->is_array() || box->size() != 4)
        throw Error(ErrorCode::validation, where + " needs bbox [x0,y0,x1,y1]");
    for (const auto& v : *box)
        if (!v.is_number()) throw Error(ErrorCode::validation, where + " has a non-numeric bbox");
    d.bbox = {(*box)[0].get<double>(), (*box)[1].get<double>(), (*box)[2].get<double>(),
              (*box)[3].get<double>()};
    return d;
}

std::string frame_id_of(const json& j) {
    auto it = j.find("frameId");
    if (it == j.end() || !it->is_string() || it->get<std::string>().empty())
        throw Error(ErrorCode::validation, "missing field frameId");
    return it->get<std::string>();
}

}  // namespace

Prediction PredictionTable::parse_record(const json& record, const Catalog& catalog) const {
    if (!record.is_object()) throw Error(ErrorCode::validation, "record is not an object");
    const bool has_scores = record.contains("scores");
    const bool has_detections = record.contains("detections");
    if (has_scores == has_detections)
        throw Error(ErrorCode::validation, "record needs exactly one of scores or detections");
    const Task shape = has_scores ? Task::classification : Task::detection;
    if (shape != model_.task)
        throw Error(ErrorCode::task_mismatch, "task mismatch",
                    json{{"modelId", model_.modelId}, {"modelTask", to_string(model_.task)},
                         {"recordTask", to_string(shape)}});

    std::string frameId = frame_id_of(record);
    if (!catalog.frame(frameId))
        throw Error(ErrorCode::validation, "unknown frameId", json{{"frameId", frameId}});

    if (shape == Task::classification) {
        const json& raw = record.at("scores");
        if (!raw.is_object()) throw Error(ErrorCode::validation, "scores must be an object");
        ClassificationPrediction p;
        p.modelId = model_.modelId;
        p.frameId = std::move(frameId);
        for (const auto& [cls, v] : raw.items()) {
            if (!model_.class_index(cls))
                throw Error(ErrorCode::validation, "undeclared class", json{{"class", cls}});
            if (!v.is_number()) throw Error(ErrorCode::validation, "score for '" + cls + "' is not a number");
            p.scores.emplace(cls, v.get<double>());
        }
        std::tie(p.topClass, p.topScore) = derive_classification_summary(p.scores);
        return p;
    }

    const json& raw = record.at("detections");
    if (!raw.is_array()) throw Error(ErrorCode::validation, "detections must be an array");
    DetectionPrediction p;
    p.modelId = model_.modelId;
    p.frameId = std::move(frameId);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        Detection d = parse_detection(raw[i], i);
        if (!model_.class_index(d.cls))
            throw Error(ErrorCode::validation, "undeclared class", json{{"class", d.cls}, {"index", i}});
        p.detections.push_back(std::move(d));
    }
    p.summary = derive_detection_summary(p.detections);
    return p;
}

bool PredictionTable::insert(Prediction prediction, const Catalog& catalog) {
    if (prediction.index() != (model_.task == Task::classification ? 0u : 1u))
        throw Error(ErrorCode::task_mismatch, "task mismatch", json{{"modelId", model_.modelId}});
    const std::string& frameId = std::visit([](const auto& p) -> const std::string& { return p.frameId; },
                                            prediction);
    if (auto it = by_frame_.find(frameId); it != by_frame_.end()) {
        bool same = model_.task == Task::classification
                        ? classifications_[it->second] == std::get<ClassificationPrediction>(prediction)
                        : detections_[it->second] == std::get<DetectionPrediction>(prediction);
        if (!same)
            throw Error(ErrorCode::conflict, "conflicting prediction for frame",
                        json{{"modelId", model_.modelId}, {"frameId", frameId}});
        return false;
    }
    std::size_t index;
    std::string key = frameId;
    if (model_.task == Task::classification) {
        index = classifications_.size();
        classifications_.push_back(std::get<ClassificationPrediction>(std::move(prediction)));
    } else {
        index = detections_.size();
        detections_.push_back(std::get<DetectionPrediction>(std::move(prediction)));
    }
    std::size_t ord = catalog.ordinal(key);
    by_frame_.emplace(std::move(key), index);
    append_columns(index);
    if (slot_by_ordinal_.size() != catalog.frame_count())
        realign(catalog);
    else
        slot_by_ordinal_[ord] = static_cast<std::int32_t>(index);
    return true;
}

IngestReport PredictionTable::ingest(std::istream& records, const Catalog& catalog) {
    // Parse everything first: a task-shape mismatch anywhere rejects the whole
    // stream before any record is committed.
    std::vector<std::pair<std::size_t, Prediction>> parsed;
    IngestReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(records, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            report.rejected.push_back({line_no, {}, "malformed JSON"});
            continue;
        }
        std::string key;
        if (j.is_object())
            if (auto it = j.find("frameId"); it != j.end() && it->is_string()) key = it->get<std::string>();
        try {
            parsed.emplace_back(line_no, parse_record(j, catalog));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::task_mismatch)
                throw Error(ErrorCode::task_mismatch, "task mismatch",
                            json{{"modelId", model_.modelId}, {"line", line_no}});
            report.rejected.push_back({line_no, key, e.what()});
        }
    }

    for (auto& [line_at, p] : parsed) {
        std::string key = std::visit([](const auto& x) { return x.frameId; }, p);
        try {
            if (insert(std::move(p), catalog)) ++report.accepted;
        } catch (const Error& e) {
            report.rejected.push_back({line_at, key, e.what()});
        }
    }
    return report;
}

const ClassificationPrediction* PredictionTable::classification(std::string_view frameId) const {
    if (model_.task != Task::classification) return nullptr;
    auto it = by_frame_.find(std::string(frameId));
    return it == by_frame_.end() ? nullptr : &classifications_[it->second];
}

const DetectionPrediction* PredictionTable::detection(std::string_view frameId) const {
    if (model_.task != Task::detection) return nullptr;
    auto it = by_frame_.find(std::string(frameId));
    return it == by_frame_.end() ? nullptr : &detections_[it->second];
}

void PredictionTable::append_columns(std::size_t index) {
    const std::size_t k = model_.classes.size();
    if (model_.task == Task::classification) {
        const auto& p = classifications_[index];
        top_class_.push_back(static_cast<std::int32_t>(*model_.class_index(p.topClass)));
        top_score_.push_back(p.topScore);
        std::size_t base = values_.size();
        values_.resize(base + k, std::numeric_limits<double>::quiet_NaN());
        for (const auto& [cls, s] : p.scores) values_[base + *model_.class_index(cls)] = s;
    } else {
        const auto& p = detections_[index];
        std::size_t base = values_.size();
        values_.resize(base + k, 0.0);
        counts_.resize(base + k, 0);
        for (const auto& [cls, n] : p.summary.counts) counts_[base + *model_.class_index(cls)] = n;
        for (const auto& [cls, s] : p.summary.maxScore) values_[base + *model_.class_index(cls)] = s;
    }
}

void PredictionTable::realign(const Catalog& catalog) {
    slot_by_ordinal_.assign(catalog.frame_count(), none);
    for (const auto& [frameId, index] : by_frame_) {
        std::size_t ord = catalog.ordinal(frameId);
        if (ord != Catalog::npos) slot_by_ordinal_[ord] = static_cast<std::int32_t>(index);
    }
}

void PredictionTable::write_records(std::ostream& out) const {
    auto emit = [&](const auto& items) {
        for (const auto& p : items) {
            json j = to_record(Prediction(p));
            j["modelId"] = model_.modelId;
            out << j.dump() << '\n';
        }
    };
    if (model_.task == Task::classification)
        emit(classifications_);
    else
        emit(detections_);
}

bool PredictionTable::operator==(const PredictionTable& other) const {
    if (model_ != other.model_ || by_frame_.size() != other.by_frame_.size()) return false;
    for (const auto& [frameId, index] : by_frame_) {
        if (model_.task == Task::classification) {
            const auto* theirs = other.classification(frameId);
            if (!theirs || *theirs != classifications_[index]) return false;
        } else {
            const auto* theirs = other.detection(frameId);
            if (!theirs || *theirs != detections_[index]) return false;
        }
    }
    return true;
}

}  // namespace framesmith
