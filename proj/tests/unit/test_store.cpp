#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "framesmith/query.hpp"
#include "framesmith/store.hpp"
#include "helpers.hpp"
#include "world.hpp"

using namespace framesmith;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("framesmith-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void populate_session(Store& store) {
    auto snap = store.snapshot();
    int i = 0;
    for (const auto& f : snap->catalog->frames()) {
        if (++i % 17 == 0) store.capture(f.frameId, i % 2 ? "blur" : "low light", std::string("workerSize"), "n" + std::to_string(i));
        if (i % 29 == 0) store.capture(f.frameId, "grayscale");
        if (i % 13 == 0) store.assign_label("view", f.frameId, "side");
    }
}

}  // namespace

TEST_CASE("store persists every record and reloads it equal") {
    TempDir dir;
    {
        Store store(dir.path);
        fstest::build_world(store, {.frames = 2000, .videos = 3, .seed = 31});
        store.register_video("video1", "North gate");
        populate_session(store);
    }
    for (auto name : {"models.jsonl", "videos.jsonl", "frames.jsonl", "predictions.jsonl", "captures.jsonl", "labels.jsonl"})
        CHECK(fs::exists(dir.path / name));

    Store reloaded(dir.path);
    Snapshot direct = Store::read(dir.path);
    CHECK(reloaded.snapshot()->same_contents(direct));
    CHECK(reloaded.snapshot()->catalog->video("video1")->name == "North gate");
    CHECK(reloaded.snapshot()->catalog->frame_count() == 2000);
    CHECK_FALSE(reloaded.snapshot()->session->captures().empty());

    // Builders of the same world in memory and on disk agree.
    Store memory;
    fstest::build_world(memory, {.frames = 2000, .videos = 3, .seed = 31});
    memory.register_video("video1", "North gate");
    memory.set_clock([] { return 0; });
    Snapshot mem = *memory.snapshot();
    CHECK(*mem.catalog == *reloaded.snapshot()->catalog);
    for (const auto& [id, table] : mem.predictions) CHECK(*table == *reloaded.snapshot()->predictions.at(id));

    SUBCASE("write and read of a snapshot copy") {
        TempDir copy;
        Store::write(*reloaded.snapshot(), copy.path);
        CHECK(Store::read(copy.path).same_contents(*reloaded.snapshot()));
    }
    SUBCASE("new captures after reload keep unique ids") {
        auto before = reloaded.snapshot()->session->captures();
        auto item = reloaded.capture(reloaded.snapshot()->catalog->list_frames("video2").at(0).frameId, "fresh tag");
        for (const auto& c : before) CHECK(c.captureId != item.captureId);
    }
}

TEST_CASE("a corrupt store file is reported with its path and line") {
    TempDir dir;
    {
        Store store(dir.path);
        fstest::register_models(store);
        fstest::ingest_manifest(store, fstest::manifest("v", 3));
    }
    {
        std::ofstream out(dir.path / "frames.jsonl", std::ios::app);
        out << "{broken\n";
    }
    auto e = expect_error([&] { Store store(dir.path); });
    CHECK(e.code() == ErrorCode::internal);
    CHECK(std::string(e.what()).find("frames.jsonl") != std::string::npos);
    CHECK(e.detail().at("line") == 4);
}

TEST_CASE("snapshots are immutable views") {
    Store store;
    fstest::register_models(store);
    fstest::ingest_manifest(store, fstest::manifest("v", 5));
    auto old = store.snapshot();
    fstest::ingest_manifest(store, fstest::manifest("w", 5));
    store.assign_label("workerSize", "v:1", "small");
    CHECK(old->catalog->frame_count() == 5);
    CHECK(old->session->labels().empty());
    CHECK(store.snapshot()->catalog->frame_count() == 10);
}

TEST_CASE("prediction columns realign when frames are added later") {
    Store store;
    fstest::register_models(store);
    fstest::ingest_manifest(store, fstest::manifest("b", 5));
    fstest::ingest_predictions(store, "workerSize", R"({"frameId":"b:2","scores":{"small":0.5}})");
    fstest::ingest_manifest(store, fstest::manifest("a", 5));
    auto hits = query::run_query(*store.snapshot(), "workerSize.topScore = 0.5");
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].frameId == "b:2");
}

TEST_CASE("readers never observe a half-applied write") {
    Store store;
    fstest::register_models(store);
    std::atomic<bool> done{false};
    std::atomic<int> reads{0};
    std::atomic<int> started{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&] {
            ++started;
            do {
                auto snap = store.snapshot();
                auto frames = query::run_query(*snap, "frameIndex >= 0");
                CHECK(frames.size() == snap->catalog->frame_count());
                auto labeled = query::run_query(*snap, "labeled(workerSize)");
                CHECK(labeled.size() == snap->session->labels().size());
                ++reads;
            } while (!done);
        });
    }
    while (started < 4) std::this_thread::yield();
    for (int v = 0; v < 20; ++v) {
        std::string video = "v" + std::to_string(v);
        fstest::ingest_manifest(store, fstest::manifest(video, 50));
        store.assign_label("workerSize", video + ":0", "small");
    }
    done = true;
    for (auto& r : readers) r.join();
    CHECK(reads > 0);
    CHECK(store.snapshot()->catalog->frame_count() == 1000);
}

TEST_CASE("reassigned labels reload with their latest class") {
    TempDir dir;
    {
        Store store(dir.path);
        fstest::register_models(store);
        fstest::ingest_manifest(store, fstest::manifest("v", 4));
        store.assign_label("workerSize", "v:1", "small");
        store.assign_label("workerSize", "v:1", "large");
        store.capture("v:2", "blur");
        store.capture("v:2", "blur");
        CHECK(Store::read(dir.path).same_contents(*store.snapshot()));
        store.flush();
        std::ifstream in(dir.path / "labels.jsonl");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    }
    Store reloaded(dir.path);
    CHECK(reloaded.snapshot()->session->label("workerSize", "v:1")->cls == "large");
    CHECK(reloaded.snapshot()->session->captures().size() == 1);
}
