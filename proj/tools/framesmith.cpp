// framesmith command-line front end.
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "framesmith/error.hpp"
#include "framesmith/query.hpp"
#include "framesmith/service.hpp"
#include "framesmith/store.hpp"
#include "framesmith/synthetic.hpp"

namespace fs = std::filesystem;
using namespace framesmith;
using nlohmann::json;

namespace {

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, "cannot open " + path.string(), json{{"path", path.string()}});
    return in;
}

void write_output(const std::string& path, const std::string& bytes) {
    if (path.empty() || path == "-") {
        std::cout << bytes;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::internal, "cannot write " + path, json{{"path", path}});
    out << bytes;
}

std::vector<std::string> split_classes(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

int serve(Store& store, service::Options options) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::Server server(store, std::move(options));
    server.start();
    std::cerr << "listening on port " << server.port() << std::endl;
    int received = 0;
    sigwait(&signals, &received);
    server.stop();
    std::cerr << "stopped" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"framesmith: frame catalog, prediction analytics and labeling session"};
    app.require_subcommand(1);

    std::string data_dir;
    app.add_option("--data-dir", data_dir, "store directory")->envname("FRAMESMITH_DATA_DIR")->required();

    auto* ingest = app.add_subcommand("ingest", "load frames or predictions");
    ingest->require_subcommand(1);
    std::string manifest;
    auto* ingest_frames = ingest->add_subcommand("frames", "ingest a frame manifest");
    ingest_frames->add_option("--manifest", manifest)->required();

    std::string model_id, file;
    auto* ingest_preds = ingest->add_subcommand("predictions", "ingest a prediction file");
    ingest_preds->add_option("--model", model_id)->required();
    ingest_preds->add_option("--file", file)->required();

    auto* reg = app.add_subcommand("register", "register a model");
    reg->require_subcommand(1);
    auto* reg_model = reg->add_subcommand("model", "register a model descriptor");
    std::string model_name, model_task, model_classes;
    reg_model->add_option("--file", file, "descriptor JSON");
    reg_model->add_option("--id", model_id);
    reg_model->add_option("--name", model_name);
    reg_model->add_option("--task", model_task, "classification | detection");
    reg_model->add_option("--classes", model_classes, "comma-separated class names");

    auto* synth = app.add_subcommand("synth", "generate synthetic predictions for a video");
    std::string video_id, scenario_path, out_path;
    std::optional<std::uint64_t> seed;
    synth->add_option("--model", model_id)->required();
    synth->add_option("--video", video_id)->required();
    synth->add_option("--seed", seed);
    synth->add_option("--scenario", scenario_path);
    synth->add_option("--out", out_path, "write the prediction file instead of ingesting it");

    auto* query_cmd = app.add_subcommand("query", "run a filter query");
    std::string expr, format = "ids";
    std::optional<std::int64_t> limit;
    query_cmd->add_option("expr", expr)->required();
    query_cmd->add_option("--limit", limit)->check(CLI::NonNegativeNumber);
    query_cmd->add_option("--format", format)->check(CLI::IsMember({"ids", "jsonl"}));

    auto* export_cmd = app.add_subcommand("export", "export session data");
    export_cmd->require_subcommand(1);
    auto* export_labels = export_cmd->add_subcommand("labels", "export labels as JSON Lines");
    export_labels->add_option("--model", model_id)->required();
    export_labels->add_option("--out", out_path);

    auto* import_cmd = app.add_subcommand("import", "import session data");
    import_cmd->require_subcommand(1);
    auto* import_labels = import_cmd->add_subcommand("labels", "import an exported label file");
    import_labels->add_option("--model", model_id)->required();
    import_labels->add_option("--file", file)->required();

    service::Options options;
    std::string ui_dir;
    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
    serve_cmd->add_option("--port", options.port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", options.host);
    serve_cmd->add_option("--ui-dir", ui_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        Store store{fs::path(data_dir)};

        if (*ingest_frames) {
            auto in = open_input(manifest);
            auto report = store.ingest_frames(in, fs::absolute(manifest).parent_path());
            std::cout << json(report).dump(2) << '\n';
        } else if (*ingest_preds) {
            auto in = open_input(file);
            std::cout << json(store.ingest_predictions(model_id, in)).dump(2) << '\n';
        } else if (*reg_model) {
            ModelDescriptor model;
            if (!file.empty()) {
                auto in = open_input(file);
                model = json::parse(in).get<ModelDescriptor>();
            } else {
                if (model_id.empty() || model_task.empty() || model_classes.empty())
                    throw Error(ErrorCode::validation, "--id, --task and --classes are required without --file");
                model.modelId = model_id;
                model.name = model_name.empty() ? model_id : model_name;
                model.task = task_from_string(model_task);
                model.classes = split_classes(model_classes);
            }
            std::cout << json(store.register_model(model)).dump(2) << '\n';
        } else if (*synth) {
            auto snap = store.snapshot();
            const ModelDescriptor* model = snap->catalog->model(model_id);
            if (!model) throw Error(ErrorCode::not_found, "unknown model '" + model_id + "'");
            SyntheticScenario scenario;
            if (!scenario_path.empty()) {
                auto in = open_input(scenario_path);
                scenario = json::parse(in).get<SyntheticScenario>();
            }
            if (seed) scenario.seed = *seed;
            auto frames = snap->catalog->list_frames(video_id);
            std::string jsonl = to_jsonl(synthetic_predict(*model, frames, scenario));
            if (!out_path.empty()) {
                write_output(out_path, jsonl);
            } else {
                std::istringstream in(jsonl);
                std::cout << json(store.ingest_predictions(model_id, in)).dump(2) << '\n';
            }
        } else if (*query_cmd) {
            auto snap = store.snapshot();
            query::Query q = query::parse(expr);
            if (limit) q.limit = q.limit ? std::min(*q.limit, *limit) : *limit;
            for (const auto& frame : query::run_query(*snap, query::check(std::move(q), *snap->catalog)))
                std::cout << (format == "ids" ? frame.frameId : json(frame).dump()) << '\n';
        } else if (*export_labels) {
            auto snap = store.snapshot();
            LabelExport out = snap->session->export_labels(*snap->catalog, model_id);
            write_output(out_path, out.jsonl);
            std::cerr << json{{"summary", out.summary}, {"total", out.total}}.dump() << '\n';
        } else if (*import_labels) {
            auto in = open_input(file);
            std::cout << json(store.import_labels(model_id, in)).dump(2) << '\n';
        } else if (*serve_cmd) {
            if (!ui_dir.empty()) options.uiDir = ui_dir;
            return serve(store, std::move(options));
        }
    } catch (const Error& e) {
        std::cerr << service::error_body(e).dump(2) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << service::error_body(Error(ErrorCode::internal, e.what())).dump(2) << '\n';
        return 1;
    }
    return 0;
}
