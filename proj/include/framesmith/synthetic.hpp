#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "framesmith/catalog.hpp"
#include "framesmith/predictions.hpp"

namespace framesmith {

enum class PlantedEffect { flip_top_class, borderline_score, drop_detections };

std::string_view to_string(PlantedEffect effect);
PlantedEffect planted_effect_from_string(std::string_view text);

struct PlantedError {
    IndexRange frames;  // inclusive frameIndex interval
    PlantedEffect effect = PlantedEffect::borderline_score;
};

struct SyntheticScenario {
    std::uint64_t seed = 0;
    std::map<std::string, double> baseClassProfile;  // empty = uniform over the model's classes
    std::vector<PlantedError> plantedErrors;
};

void from_json(const nlohmann::json& j, SyntheticScenario& s);
void to_json(nlohmann::json& j, const SyntheticScenario& s);

/// Deterministic stand-in for a model: every prediction is a pure function
/// of (seed, modelId, frameId) plus the planted effects covering the frame.
///
/// Unplanted classification frames get topScore in [0.75, 0.99) with the
/// remaining classes below 0.25, so they never fall in the default
/// borderline band. Planted effects:
///   flipTopClass    - the argmax moves to a different class (detections are
///                     relabelled to the next declared class);
///   borderlineScore - topScore (or every detection score) is drawn from
///                     [0.45, 0.65];
///   dropDetections  - the detection list is emptied (detection models only).
///
/// Throws Error(validation) for an invalid profile, an effect the model's
/// task cannot express, or an interval outside the frames' index range.
std::vector<Prediction> synthetic_predict(const ModelDescriptor& model, std::span<const FrameRecord> frames,
                                          const SyntheticScenario& scenario);

/// Raw JSON Lines prediction file for `predictions`.
std::string to_jsonl(const std::vector<Prediction>& predictions);

}  // namespace framesmith
