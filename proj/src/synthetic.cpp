#include "framesmith/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "framesmith/error.hpp"

namespace framesmith {

using nlohmann::json;

std::string_view to_string(PlantedEffect effect) {
    switch (effect) {
    case PlantedEffect::flip_top_class: return "flipTopClass";
    case PlantedEffect::borderline_score: return "borderlineScore";
    case PlantedEffect::drop_detections: return "dropDetections";
    }
    return "?";
}

PlantedEffect planted_effect_from_string(std::string_view text) {
    if (text == "flipTopClass") return PlantedEffect::flip_top_class;
    if (text == "borderlineScore") return PlantedEffect::borderline_score;
    if (text == "dropDetections") return PlantedEffect::drop_detections;
    throw Error(ErrorCode::validation, "unknown planted effect '" + std::string(text) + "'");
}

void from_json(const json& j, SyntheticScenario& s) {
    s.seed = j.value("seed", std::uint64_t{0});
    if (auto it = j.find("baseClassProfile"); it != j.end())
        it->get_to(s.baseClassProfile);
    else if (auto alt = j.find("classProfile"); alt != j.end())
        alt->get_to(s.baseClassProfile);
    s.plantedErrors.clear();
    if (auto it = j.find("plantedErrors"); it != j.end()) {
        for (const auto& e : *it) {
            PlantedError p;
            p.frames = {e.at("first").get<std::int64_t>(), e.at("last").get<std::int64_t>()};
            p.effect = planted_effect_from_string(e.at("effect").get<std::string>());
            s.plantedErrors.push_back(p);
        }
    }
}

void to_json(json& j, const SyntheticScenario& s) {
    json planted = json::array();
    for (const auto& p : s.plantedErrors)
        planted.push_back({{"first", p.frames.first}, {"last", p.frames.last}, {"effect", to_string(p.effect)}});
    j = json{{"seed", s.seed}, {"baseClassProfile", s.baseClassProfile}, {"plantedErrors", planted}};
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Uniform [0,1) from the top 53 bits; std::uniform_real_distribution is not
// reproducible across standard libraries.
class FrameRng {
public:
    FrameRng(std::uint64_t seed, std::string_view modelId, std::string_view frameId) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int i = 0; i < 8; ++i) {
            h ^= (seed >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
        h = fnv1a(h, modelId);
        h = fnv1a(h, std::string_view("\0", 1));
        h = fnv1a(h, frameId);
        engine_.seed(h);
    }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    std::size_t below(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform() * n)); }

private:
    std::mt19937_64 engine_;
};

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::vector<double> weights_for(const ModelDescriptor& model, const SyntheticScenario& scenario) {
    std::vector<double> w(model.classes.size(), scenario.baseClassProfile.empty() ? 1.0 : 0.0);
    for (const auto& [cls, weight] : scenario.baseClassProfile) {
        auto idx = model.class_index(cls);
        if (!idx) throw Error(ErrorCode::validation, "profile class '" + cls + "' is not declared on " + model.modelId);
        if (!(weight >= 0.0) || !std::isfinite(weight))
            throw Error(ErrorCode::validation, "profile weight for '" + cls + "' must be non-negative");
        w[*idx] = weight;
    }
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; }))
        throw Error(ErrorCode::validation, "profile weights are all zero");
    return w;
}

std::size_t pick(const std::vector<double>& weights, double u) {
    double total = 0;
    for (double w : weights) total += w;
    double target = u * total;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0) continue;
        last_positive = i;
        if (target < weights[i]) return i;
        target -= weights[i];
    }
    return last_positive;
}

ClassificationPrediction classify(const ModelDescriptor& model, const FrameRecord& frame,
                                  const std::vector<double>& weights, const std::vector<PlantedEffect>& effects,
                                  FrameRng& rng) {
    const std::size_t k = model.classes.size();
    std::vector<double> scores(k);
    std::size_t top = pick(weights, rng.uniform());
    scores[top] = round4(0.75 + 0.24 * rng.uniform());
    for (std::size_t i = 0; i < k; ++i)
        if (i != top) scores[i] = round4((1.0 - scores[top]) * rng.uniform());

    for (PlantedEffect e : effects) {
        if (e == PlantedEffect::flip_top_class) {
            std::size_t other = (top + 1 + rng.below(k - 1)) % k;
            std::swap(scores[top], scores[other]);
            top = other;
        } else if (e == PlantedEffect::borderline_score) {
            double t = round4(0.45 + 0.2 * rng.uniform());
            for (std::size_t i = 0; i < k; ++i)
                if (i != top) scores[i] = round4(scores[i] * t / scores[top]);
            scores[top] = t;
        }
    }

    ClassificationPrediction p;
    p.modelId = model.modelId;
    p.frameId = frame.frameId;
    for (std::size_t i = 0; i < k; ++i) p.scores.emplace(model.classes[i], scores[i]);
    std::tie(p.topClass, p.topScore) = derive_classification_summary(p.scores);
    return p;
}

DetectionPrediction detect(const ModelDescriptor& model, const FrameRecord& frame, const std::vector<double>& weights,
                           const std::vector<PlantedEffect>& effects, FrameRng& rng) {
    const std::size_t k = model.classes.size();
    const double max_weight = *std::max_element(weights.begin(), weights.end());
    DetectionPrediction p;
    p.modelId = model.modelId;
    p.frameId = frame.frameId;
    for (std::size_t c = 0; c < k; ++c) {
        double presence = 0.8 * weights[c] / max_weight;
        double u = rng.uniform();
        if (weights[c] <= 0 || u >= presence) continue;
        std::size_t n = 1 + rng.below(3);
        for (std::size_t i = 0; i < n; ++i) {
            Detection d;
            d.cls = model.classes[c];
            d.score = round4(0.3 + 0.69 * rng.uniform());
            double x0 = round4(0.8 * rng.uniform()), y0 = round4(0.8 * rng.uniform());
            d.bbox = {x0, y0, round4(x0 + 0.05 + 0.15 * rng.uniform()), round4(y0 + 0.05 + 0.15 * rng.uniform())};
            p.detections.push_back(std::move(d));
        }
    }

    for (PlantedEffect e : effects) {
        switch (e) {
        case PlantedEffect::flip_top_class:
            for (auto& d : p.detections) d.cls = model.classes[(*model.class_index(d.cls) + 1) % k];
            break;
        case PlantedEffect::borderline_score:
            for (auto& d : p.detections) d.score = round4(0.45 + 0.2 * rng.uniform());
            break;
        case PlantedEffect::drop_detections:
            p.detections.clear();
            break;
        }
    }
    p.summary = derive_detection_summary(p.detections);
    return p;
}

}  // namespace

std::vector<Prediction> synthetic_predict(const ModelDescriptor& model, std::span<const FrameRecord> frames,
                                          const SyntheticScenario& scenario) {
    validate(model);
    const std::vector<double> weights = weights_for(model, scenario);

    if (!frames.empty()) {
        auto [lo, hi] = std::minmax_element(frames.begin(), frames.end(), [](const auto& a, const auto& b) {
            return a.frameIndex < b.frameIndex;
        });
        for (const auto& p : scenario.plantedErrors) {
            if (p.frames.first > p.frames.last || p.frames.first < lo->frameIndex || p.frames.last > hi->frameIndex)
                throw Error(ErrorCode::validation,
                            "planted interval [" + std::to_string(p.frames.first) + "," +
                                std::to_string(p.frames.last) + "] is outside the video's frame range",
                            json{{"first", p.frames.first}, {"last", p.frames.last}});
        }
    }
    for (const auto& p : scenario.plantedErrors) {
        if (p.effect == PlantedEffect::drop_detections && model.task != Task::detection)
            throw Error(ErrorCode::validation, "dropDetections needs a detection model");
        if (p.effect == PlantedEffect::flip_top_class && model.classes.size() < 2)
            throw Error(ErrorCode::validation, "flipTopClass needs at least two classes");
    }

    std::vector<Prediction> out;
    out.reserve(frames.size());
    std::vector<PlantedEffect> effects;
    for (const auto& frame : frames) {
        effects.clear();
        for (const auto& p : scenario.plantedErrors)
            if (p.frames.contains(frame.frameIndex)) effects.push_back(p.effect);
        FrameRng rng(scenario.seed, model.modelId, frame.frameId);
        if (model.task == Task::classification)
            out.emplace_back(classify(model, frame, weights, effects, rng));
        else
            out.emplace_back(detect(model, frame, weights, effects, rng));
    }
    return out;
}

std::string to_jsonl(const std::vector<Prediction>& predictions) {
    std::string out;
    for (const auto& p : predictions) out += to_record(p).dump() + '\n';
    return out;
}

}  // namespace framesmith
