#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "framesmith/predictions.hpp"
#include "framesmith/store.hpp"
#include "framesmith/synthetic.hpp"
#include "helpers.hpp"
#include "world.hpp"

using namespace framesmith;
using nlohmann::json;

TEST_CASE("derive_classification_summary") {
    CHECK(derive_classification_summary({{"small", 0.1}, {"large", 0.8}, {"noWorker", 0.1}}) ==
          std::pair<std::string, double>{"large", 0.8});
    CHECK(derive_classification_summary({{"a", 0.5}, {"b", 0.5}}) == std::pair<std::string, double>{"a", 0.5});
    CHECK(derive_classification_summary({{"noWorker", 1.0}}) == std::pair<std::string, double>{"noWorker", 1.0});

    CHECK(expect_error([] { derive_classification_summary({}); }).code() == ErrorCode::validation);
    CHECK(expect_error([] { derive_classification_summary({{"a", 1.5}}); }).code() == ErrorCode::validation);
    CHECK(expect_error([] { derive_classification_summary({{"a", -0.1}}); }).code() == ErrorCode::validation);
}

TEST_CASE("classification summary equals brute-force max and smallest argmax") {
    std::mt19937_64 rng(5);
    const std::vector<std::string> names = {"b", "a", "d", "c", "noWorker", "large"};
    for (int trial = 0; trial < 2000; ++trial) {
        std::map<std::string, double> scores;
        for (std::size_t n = 1 + rng() % names.size(); n > 0; --n)
            scores[names[rng() % names.size()]] = static_cast<double>(rng() % 5) / 4.0;
        double best = -1;
        for (const auto& [_, s] : scores) best = std::max(best, s);
        std::string argmax;
        for (const auto& [c, s] : scores)
            if (s == best && (argmax.empty() || c < argmax)) argmax = c;
        auto [top, score] = derive_classification_summary(scores);
        CHECK(score == best);
        CHECK(top == argmax);
    }
}

TEST_CASE("derive_detection_summary") {
    Detection w9{"worker", 0.9, {0, 0, 0.5, 0.5}};
    Detection w6{"worker", 0.6, {0.1, 0.1, 0.2, 0.2}};
    Detection w7{"worker", 0.7, {0.1, 0.1, 0.2, 0.2}};
    Detection h4{"helmet", 0.4, {0.3, 0.3, 0.4, 0.4}};

    auto s = derive_detection_summary({w9, w6});
    CHECK(s.classes == std::vector<std::string>{"worker"});
    CHECK(s.counts == std::map<std::string, std::int64_t>{{"worker", 2}});
    CHECK(s.maxScore == std::map<std::string, double>{{"worker", 0.9}});

    s = derive_detection_summary({});
    CHECK(s.classes.empty());
    CHECK(s.counts.empty());
    CHECK(s.maxScore.empty());

    s = derive_detection_summary({w7, h4});
    CHECK(s.counts == std::map<std::string, std::int64_t>{{"helmet", 1}, {"worker", 1}});
    CHECK(s.maxScore == std::map<std::string, double>{{"helmet", 0.4}, {"worker", 0.7}});

    Detection bad{"worker", 0.5, {0.5, 0.1, 0.5, 0.2}};
    auto e = expect_error([&] { derive_detection_summary({w9, bad}); });
    CHECK(e.code() == ErrorCode::validation);
    CHECK(e.detail().at("index") == 1);
    Detection outside{"worker", 0.5, {0.5, 0.1, 1.2, 0.2}};
    CHECK(expect_error([&] { derive_detection_summary({outside}); }).code() == ErrorCode::validation);
}

TEST_CASE("ingest_predictions") {
    Store store;
    fstest::register_models(store);
    fstest::ingest_manifest(store, fstest::manifest("v", 100));

    std::string records;
    for (int i = 0; i < 100; ++i)
        records += json{{"frameId", "v:" + std::to_string(i)},
                        {"scores", {{"noWorker", 0.1}, {"small", (i % 10) / 10.0}, {"large", 0.45}}}}
                       .dump() +
                   "\n";
    auto in = lines(records);
    auto report = store.ingest_predictions("workerSize", in);
    CHECK(report.accepted == 100);
    CHECK(report.rejected.empty());
    auto snap = store.snapshot();
    const auto* p = snap->table("workerSize")->classification("v:7");
    REQUIRE(p);
    CHECK(p->topClass == "small");
    CHECK(p->topScore == 0.7);
    CHECK(snap->table("workerSize")->classification("v:2")->topClass == "large");

    SUBCASE("identical re-ingest is a no-op, a conflicting one is rejected") {
        auto again = lines(records);
        CHECK(store.ingest_predictions("workerSize", again).accepted == 0);
        auto conflict = lines(R"({"frameId":"v:1","scores":{"noWorker":0.9}})");
        auto r = store.ingest_predictions("workerSize", conflict);
        CHECK(r.accepted == 0);
        REQUIRE(r.rejected.size() == 1);
        CHECK(r.rejected[0].key == "v:1");
    }
    SUBCASE("per-record rejections") {
        auto bad = lines(R"({"frameId":"v:1","scores":{"dog":0.9}}
{"frameId":"ghost","scores":{"small":0.2}}
{"frameId":"v:3","scores":{"small":1.5}}
{"frameId":"v:4"}
)");
        Store fresh;
        fstest::register_models(fresh);
        fstest::ingest_manifest(fresh, fstest::manifest("v", 10));
        auto r = fresh.ingest_predictions("workerSize", bad);
        CHECK(r.accepted == 0);
        REQUIRE(r.rejected.size() == 4);
        CHECK(r.rejected[0].reason == "undeclared class");
        CHECK(r.rejected[1].reason == "unknown frameId");
        CHECK(r.rejected[2].line == 3);
    }
    SUBCASE("task mismatch is a stream-level error and commits nothing") {
        Store fresh;
        fstest::register_models(fresh);
        fstest::ingest_manifest(fresh, fstest::manifest("v", 10));
        auto mixed = lines(R"({"frameId":"v:1","scores":{"small":0.9}}
{"frameId":"v:2","detections":[{"class":"worker","score":0.9,"bbox":[0,0,1,1]}]}
)");
        auto e = expect_error([&] { fresh.ingest_predictions("workerSize", mixed); });
        CHECK(e.code() == ErrorCode::task_mismatch);
        CHECK(std::string(e.what()) == "task mismatch");
        CHECK(fresh.snapshot()->table("workerSize")->size() == 0);
    }
    SUBCASE("unknown model") {
        auto in2 = lines(records);
        CHECK(expect_error([&] { store.ingest_predictions("nope", in2); }).code() == ErrorCode::not_found);
    }
}

TEST_CASE("stored summaries equal recomputed summaries") {
    Store store;
    fstest::build_world(store, {.frames = 3000, .videos = 3, .seed = 21});
    auto snap = store.snapshot();
    std::size_t checked = 0;
    for (const auto& [id, table] : snap->predictions) {
        for (const auto& c : table->classifications()) {
            auto [top, score] = derive_classification_summary(c.scores);
            CHECK(top == c.topClass);
            CHECK(score == c.topScore);
            ++checked;
        }
        for (const auto& d : table->detections()) {
            auto s = derive_detection_summary(d.detections);
            CHECK(s.classes == d.summary.classes);
            CHECK(s.counts == d.summary.counts);
            CHECK(s.maxScore == d.summary.maxScore);
            ++checked;
        }
    }
    CHECK(checked > 6000);
}

TEST_CASE("synthetic_predict") {
    Catalog cat;
    auto in = lines(fstest::manifest("v", 40));
    cat.ingest_frames(in);
    auto frames = cat.list_frames("v");
    ModelDescriptor clf{"workerSize", "workerSize", Task::classification, {"noWorker", "small", "medium", "large"}};
    ModelDescriptor det{"worker", "worker", Task::detection, {"worker", "vest"}};

    SUBCASE("seed 7 twice gives byte-identical streams") {
        SyntheticScenario s{7, {}, {}};
        CHECK(to_jsonl(synthetic_predict(clf, frames, s)) == to_jsonl(synthetic_predict(clf, frames, s)));
        CHECK(to_jsonl(synthetic_predict(det, frames, s)) == to_jsonl(synthetic_predict(det, frames, s)));
        SyntheticScenario other{8, {}, {}};
        CHECK(to_jsonl(synthetic_predict(clf, frames, s)) != to_jsonl(synthetic_predict(clf, frames, other)));
    }
    SUBCASE("a frame's prediction does not depend on the other frames") {
        SyntheticScenario s{7, {}, {}};
        auto all = synthetic_predict(clf, frames, s);
        std::vector<FrameRecord> one{frames[13]};
        CHECK(to_jsonl(synthetic_predict(clf, one, s)) == to_jsonl({all[13]}));
    }
    SUBCASE("borderlineScore plant on frames 10-19") {
        SyntheticScenario s{7, {}, {{{10, 19}, PlantedEffect::borderline_score}}};
        auto preds = synthetic_predict(clf, frames, s);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            double top = std::get<ClassificationPrediction>(preds[i]).topScore;
            if (i >= 10 && i <= 19) {
                CHECK(top > 0.4);
                CHECK(top < 0.7);
            } else {
                CHECK(top >= 0.75);
            }
        }
    }
    SUBCASE("flipTopClass moves the argmax") {
        SyntheticScenario base{3, {}, {}};
        SyntheticScenario flipped{3, {}, {{{0, 39}, PlantedEffect::flip_top_class}}};
        auto a = synthetic_predict(clf, frames, base);
        auto b = synthetic_predict(clf, frames, flipped);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::get<ClassificationPrediction>(a[i]).topClass !=
                  std::get<ClassificationPrediction>(b[i]).topClass);
    }
    SUBCASE("dropDetections plant on frames 0-4") {
        SyntheticScenario s{7, {{"worker", 1.0}, {"vest", 1.0}}, {{{0, 4}, PlantedEffect::drop_detections}}};
        auto preds = synthetic_predict(det, frames, s);
        std::size_t nonempty = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const auto& d = std::get<DetectionPrediction>(preds[i]);
            if (i <= 4) CHECK(d.summary.classes.empty());
            nonempty += !d.detections.empty();
        }
        CHECK(nonempty > 20);
    }
    SUBCASE("class profile weights steer the top class") {
        SyntheticScenario s{1, {{"large", 1.0}}, {}};
        for (const auto& p : synthetic_predict(clf, frames, s))
            CHECK(std::get<ClassificationPrediction>(p).topClass == "large");
    }
    SUBCASE("generated records pass ingest validation") {
        Store store;
        store.register_model(det);
        fstest::ingest_manifest(store, fstest::manifest("v", 40));
        SyntheticScenario s{9, {}, {{{5, 9}, PlantedEffect::borderline_score}}};
        fstest::ingest_predictions(store, "worker", to_jsonl(synthetic_predict(det, frames, s)));
        CHECK(store.snapshot()->table("worker")->size() == 40);
    }
    SUBCASE("invalid scenarios") {
        auto out_of_range = SyntheticScenario{1, {}, {{{35, 45}, PlantedEffect::borderline_score}}};
        CHECK(expect_error([&] { synthetic_predict(clf, frames, out_of_range); }).code() == ErrorCode::validation);
        auto zero = SyntheticScenario{1, {{"small", 0.0}}, {}};
        CHECK(expect_error([&] { synthetic_predict(clf, frames, zero); }).code() == ErrorCode::validation);
        auto negative = SyntheticScenario{1, {{"small", -1.0}, {"large", 2.0}}, {}};
        CHECK(expect_error([&] { synthetic_predict(clf, frames, negative); }).code() == ErrorCode::validation);
        auto undeclared = SyntheticScenario{1, {{"dog", 1.0}}, {}};
        CHECK(expect_error([&] { synthetic_predict(clf, frames, undeclared); }).code() == ErrorCode::validation);
        auto drop_on_clf = SyntheticScenario{1, {}, {{{0, 1}, PlantedEffect::drop_detections}}};
        CHECK(expect_error([&] { synthetic_predict(clf, frames, drop_on_clf); }).code() == ErrorCode::validation);
    }
    SUBCASE("scenario JSON") {
        auto s = json::parse(R"({"seed":7,"classProfile":{"small":2},"plantedErrors":[{"first":1,"last":3,"effect":"flipTopClass"}]})")
                     .get<SyntheticScenario>();
        CHECK(s.seed == 7);
        CHECK(s.baseClassProfile.at("small") == 2.0);
        REQUIRE(s.plantedErrors.size() == 1);
        CHECK(s.plantedErrors[0].effect == PlantedEffect::flip_top_class);
        CHECK(json(s).get<SyntheticScenario>().plantedErrors[0].frames == IndexRange{1, 3});
        CHECK(expect_error([] { json::parse(R"({"plantedErrors":[{"first":1,"last":3,"effect":"melt"}]})")
                                    .get<SyntheticScenario>(); })
                  .code() == ErrorCode::validation);
    }
}
