#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "framesmith/analytics.hpp"
#include "framesmith/query.hpp"
#include "framesmith/service.hpp"
#include "helpers.hpp"
#include "world.hpp"

using namespace framesmith;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Running {
    Store& store;
    service::Server server;
    httplib::Client client;

    explicit Running(Store& s, service::Options options = {.port = 0})
        : store(s), server(s, options), client("127.0.0.1", server.bind()) {
        server.start();
        client.set_read_timeout(30, 0);
    }
    ~Running() { server.stop(); }

    json get(const std::string& path, int expect = 200) {
        auto res = client.Get(path);
        REQUIRE(res);
        INFO(path << " -> " << res->body);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }
    json post(const std::string& path, const json& body, int expect = 200) {
        auto res = client.Post(path, body.dump(), "application/json");
        REQUIRE(res);
        INFO(path << " -> " << res->body);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }
};

std::vector<std::string> ids(const json& frames) {
    std::vector<std::string> out;
    for (const auto& f : frames) out.push_back(f.at("frameId"));
    return out;
}

std::vector<std::string> ids(const std::vector<FrameRecord>& frames) {
    std::vector<std::string> out;
    for (const auto& f : frames) out.push_back(f.frameId);
    return out;
}

}  // namespace

TEST_CASE("status mapping and error body") {
    CHECK(service::http_status(ErrorCode::not_found) == 404);
    CHECK(service::http_status(ErrorCode::validation) == 400);
    CHECK(service::http_status(ErrorCode::syntax) == 400);
    CHECK(service::http_status(ErrorCode::task_mismatch) == 400);
    CHECK(service::http_status(ErrorCode::conflict) == 409);
    CHECK(service::http_status(ErrorCode::internal) == 500);
    json body = service::error_body(Error(ErrorCode::syntax, "boom", json{{"offset", 3}}));
    CHECK(body == json{{"error", {{"code", "syntax"}, {"message", "boom"}, {"detail", {{"offset", 3}}}}}});
}

TEST_CASE("catalog and frame endpoints") {
    Store store;
    fstest::register_models(store);
    fstest::ingest_manifest(store, fstest::manifest("a", 10));
    store.register_video("a", "Dock");
    fstest::ingest_predictions(store, "workerSize", R"({"frameId":"a:2","scores":{"small":0.7,"large":0.2}})");
    fstest::ingest_predictions(store, "worker",
                               R"({"frameId":"a:2","detections":[{"class":"vest","score":0.9,"bbox":[0.1,0.2,0.3,0.4]}]})");
    store.assign_label("workerSize", "a:2", "small");
    Running run(store);

    json models = run.get("/models");
    REQUIRE(models.size() == 3);
    auto ws = std::find_if(models.begin(), models.end(), [](auto& m) { return m.at("modelId") == "workerSize"; });
    REQUIRE(ws != models.end());
    CHECK(ws->at("classes").size() == 4);
    CHECK(ws->at("task") == "classification");

    json videos = run.get("/videos");
    REQUIRE(videos.size() == 1);
    CHECK(videos[0].at("name") == "Dock");
    CHECK(videos[0].at("frameCount") == 10);

    json frame = run.get("/frames/a:2");
    CHECK(frame.at("frame").at("frameId") == "a:2");
    CHECK(frame.at("predictions").at("workerSize").at("topClass") == "small");
    CHECK(frame.at("predictions").at("worker").at("detections").size() == 1);
    CHECK(frame.at("labels") == json{{"workerSize", "small"}});

    json missing = run.get("/frames/nope", 404);
    CHECK(missing.at("error").at("code") == "notFound");
    CHECK(run.get("/no/such/route", 404).at("error").at("code") == "notFound");
}

TEST_CASE("query endpoint") {
    Store store;
    fstest::build_world(store, {.frames = 600, .videos = 2, .seed = 8});
    Running run(store);

    json err = run.post("/query", {{"q", "bad ("}}, 400);
    CHECK(err.at("error").at("code") == "syntax");
    CHECK(err.at("error").at("detail").at("offset").is_number());

    err = run.post("/query", {{"q", "ghost.topScore > 0.5"}}, 400);
    CHECK(err.at("error").at("code") == "validation");
    err = run.post("/query", {{"q", "worker.topScore > 0.5"}}, 400);
    CHECK(err.at("error").at("code") == "taskMismatch");
    CHECK(run.post("/query", {{"nope", 1}}, 400).at("error").at("code") == "validation");
    CHECK(run.post("/query", {{"q", "frameIndex >= 0"}, {"limit", 0}}, 400).at("error").at("code") == "validation");
    auto raw = run.client.Post("/query", "{not json", "application/json");
    REQUIRE(raw);
    CHECK(raw->status == 400);

    for (std::string q : {"workerSize.topScore > 0.4 and workerSize.topScore < 0.7",
                          "worker.count[vest] >= 1 order by worker.maxScore[vest] desc",
                          "labeled(workerSize) or view.topClass = side"}) {
        json body = run.post("/query", {{"q", q}});
        auto expected = query::run_query(*store.snapshot(), q);
        CHECK(ids(body.at("frames")) == ids(expected));
        CHECK(body.at("count") == expected.size());
        CHECK(body.at("frames") == json(expected));
    }
    json limited = run.post("/query", {{"q", "frameIndex >= 0 limit 50"}, {"limit", 7}});
    CHECK(limited.at("count") == 7);
}

TEST_CASE("analytics endpoints return the library results") {
    Store store;
    fstest::build_world(store, {.frames = 800, .videos = 2, .seed = 21});
    Running run(store);
    auto snap = store.snapshot();

    json tl = run.get("/timeline?model=workerSize&model=view&video=video0&bins=12");
    CHECK(tl == json(analytics::stack_timelines(*snap, {"workerSize", "view"}, "video0", 12)));
    json tl_default = run.get("/timeline?model=workerSize&video=video0");
    CHECK(tl_default.at("binCount") == 100);
    CHECK(run.get("/timeline?video=video0", 400).at("error").at("code") == "validation");
    CHECK(run.get("/timeline?model=workerSize&video=zzz", 404).at("error").at("code") == "notFound");
    CHECK(run.get("/timeline?model=workerSize&video=video0&bins=0", 400).at("error").at("code") == "validation");

    json sc = run.get("/scatter?x=workerSize.topScore&y=worker.maxScore%5Bvest%5D&q=video%20%3D%20video1");
    auto filter = query::check(query::parse("video = video1"), *snap->catalog);
    CHECK(sc.at("points") == json(analytics::project_scatter(*snap, analytics::parse_axis("workerSize.topScore"),
                                                             analytics::parse_axis("worker.maxScore[vest]"), &filter)));
    CHECK(run.get("/scatter?x=workerSize.topClass&y=view.topScore", 400).at("error").at("code") == "validation");

    json bl = run.get("/mine/borderline?model=workerSize&low=0.4&high=0.7");
    CHECK(bl.at("frames") == json(analytics::find_borderline(*snap, "workerSize", 0.4, 0.7)));
    CHECK(run.get("/mine/borderline?model=workerSize&low=0.8&high=0.2", 400).at("error").at("code") == "validation");
    CHECK(run.get("/mine/borderline?model=workerSize&low=abc", 400).at("error").at("code") == "validation");
    CHECK(run.get("/mine/borderline?model=worker", 400).at("error").at("code") == "taskMismatch");

    analytics::DisagreementSpec spec{"workerSize", "noWorker", "worker", "worker"};
    json dis = run.get("/mine/disagreement?classifier=workerSize&absence=noWorker&detector=worker&object=worker");
    CHECK(dis.at("frames") == json(analytics::find_disagreements(*snap, spec)));
    CHECK(dis.at("mode") == "absenceVsPresence");

    json fl = run.get("/mine/flicker?model=workerSize&video=video1&w=4&min=2");
    analytics::FlickerConfig cfg;
    cfg.windowSize = 4;
    cfg.minChanges = 2;
    CHECK(fl.at("intervals") == json(analytics::detect_flicker(*snap, "workerSize", "video1", cfg)));
}

TEST_CASE("session endpoints") {
    Store store;
    fstest::register_models(store);
    fstest::ingest_manifest(store, fstest::manifest("a", 5));
    Running run(store);

    json cap = run.post("/captures", {{"frameId", "a:1"}, {"reasonTag", "blur"}, {"modelId", "workerSize"}});
    CHECK(cap.at("frameId") == "a:1");
    CHECK(run.post("/captures", {{"frameId", "a:1"}, {"reasonTag", "blur"}, {"modelId", "workerSize"}}) == cap);
    CHECK(run.post("/captures", {{"frameId", "zz"}, {"reasonTag", "blur"}}, 404).at("error").at("code") == "notFound");
    CHECK(run.post("/captures", {{"frameId", "a:1"}}, 400).at("error").at("detail").at("field") == "reasonTag");
    json listing = run.get("/captures?tag=blur");
    CHECK(listing.at("items").size() == 1);
    CHECK(listing.at("byTag").at("blur").at("captures") == 1);

    run.post("/labels", {{"modelId", "workerSize"}, {"frameId", "a:3"}, {"class", "large"}});
    CHECK(run.post("/labels", {{"modelId", "workerSize"}, {"frameId", "a:3"}, {"class", "dog"}}, 400)
              .at("error").at("code") == "validation");
    CHECK(run.post("/labels", {{"modelId", "worker"}, {"frameId", "a:3"}, {"class", "vest"}}, 400)
              .at("error").at("code") == "taskMismatch");
    json exported = run.get("/export/labels?model=workerSize");
    CHECK(exported.at("total") == 1);
    CHECK(exported.at("labels") == json::array({{{"imagePath", "/frames/a/3.png"}, {"class", "large"}}}));
    CHECK(exported.at("summary").at("large") == 1);
    CHECK(exported.at("summary").at("small") == 0);
}

TEST_CASE("frame images") {
    fs::path dir = fs::temp_directory_path() / ("framesmith-img-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string png("\x89PNG\r\n\x1a\n\0\0\0\rIHDR", 16);
    {
        std::ofstream(dir / "0.png", std::ios::binary) << png;
        std::ofstream(dir / "1.jpg", std::ios::binary) << "jpegbytes";
    }
    Store store;
    fstest::ingest_manifest(store, json{{"videoId", "v"}, {"frameIndex", 0}, {"timestampSec", 0},
                                        {"imagePath", (dir / "0.png").string()}}.dump() + "\n" +
                                       json{{"videoId", "v"}, {"frameIndex", 1}, {"timestampSec", 0.1},
                                            {"imagePath", (dir / "1.jpg").string()}}.dump() + "\n");
    Running run(store);

    auto res = run.client.Get("/frames/v:0/image");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == png);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    CHECK(res->get_header_value("Cache-Control") == "private, max-age=86400");
    CHECK(run.client.Get("/frames/v:1/image")->get_header_value("Content-Type") == "image/jpeg");

    auto head = run.client.Head("/frames/v:0/image");
    REQUIRE(head);
    CHECK(head->status == 200);
    CHECK(head->body.empty());

    fs::remove(dir / "0.png");
    res = run.client.Get("/frames/v:0/image");
    REQUIRE(res);
    CHECK(res->status == 404);
    json err = json::parse(res->body);
    CHECK(err.at("error").at("code") == "notFound");
    CHECK(err.at("error").at("detail").at("path") == (dir / "0.png").string());
    head = run.client.Head("/frames/v:0/image");
    REQUIRE(head);
    CHECK(head->status == 404);
    CHECK(head->body.empty());

    res = run.client.Get("/frames/ghost/image");
    REQUIRE(res);
    CHECK(res->status == 404);
    fs::remove_all(dir);
}

TEST_CASE("a busy port is a startup error") {
    Store store;
    service::Server first(store, {.port = 0});
    int port = first.bind();
    service::Server second(store, {.port = port});
    auto e = expect_error([&] { second.bind(); });
    CHECK(e.code() == ErrorCode::internal);
    CHECK(std::string(e.what()).find(std::to_string(port)) != std::string::npos);
}

TEST_CASE("concurrent reads and writes leave the store consistent") {
    Store store;
    fstest::build_world(store, {.frames = 1500, .videos = 3, .seed = 77});
    Running run(store, {.port = 0, .threads = 128});
    std::vector<std::string> frames;
    for (const auto& f : store.snapshot()->catalog->frames()) frames.push_back(f.frameId);

    constexpr int workers = 120;
    std::atomic<int> ready{0};
    std::atomic<int> failures{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < workers; ++t) {
        threads.emplace_back([&, t] {
            httplib::Client c("127.0.0.1", run.server.port());
            c.set_read_timeout(60, 0);
            std::mt19937_64 rng(static_cast<std::uint64_t>(t));
            ++ready;
            while (ready < workers) std::this_thread::yield();
            for (int i = 0; i < 10; ++i) {
                const std::string& frame = frames[rng() % frames.size()];
                httplib::Result res;
                switch ((t + i) % 5) {
                case 0:
                    res = c.Post("/query", json{{"q", "workerSize.topScore > 0.3 and labeled(workerSize)"}}.dump(),
                                 "application/json");
                    break;
                case 1:
                    res = c.Post("/captures",
                                 json{{"frameId", frame}, {"reasonTag", "tag" + std::to_string(rng() % 4)}}.dump(),
                                 "application/json");
                    break;
                case 2:
                    res = c.Post("/labels", json{{"modelId", "workerSize"}, {"frameId", frame}, {"class", "small"}}.dump(),
                                 "application/json");
                    break;
                case 3: res = c.Get("/timeline?model=workerSize&video=video1&bins=40"); break;
                default: res = c.Get("/captures"); break;
                }
                if (!res || res->status != 200) {
                    ++failures;
                    MESSAGE("request failed: " << (res ? res->body : httplib::to_string(res.error())));
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(failures == 0);

    auto snap = store.snapshot();
    auto labeled = query::run_query(*snap, "labeled(workerSize)");
    std::size_t ws_labels = 0;
    for (const auto& l : snap->session->labels()) ws_labels += l.modelId == "workerSize";
    CHECK(labeled.size() == ws_labels);
    auto listing = snap->session->list_captures();
    std::int64_t total = 0;
    for (const auto& [tag, s] : listing.byTag) total += s.captures;
    CHECK(total == static_cast<std::int64_t>(listing.items.size()));
    std::set<std::tuple<std::string, std::string, std::string>> triples;
    for (const auto& c : snap->session->captures())
        CHECK(triples.insert({c.frameId, c.reasonTag, c.modelId.value_or("")}).second);
    json served = run.get("/captures");
    CHECK(served.at("items").size() == listing.items.size());
}
