#include "dstk/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dstk/checkpoint.hpp"
#include "dstk/dataset.hpp"
#include "dstk/errors.hpp"
#include "dstk/fetch.hpp"
#include "dstk/metrics.hpp"
#include "dstk/stacking.hpp"
#include "dstk/threading.hpp"

namespace dstk {

namespace fs = std::filesystem;

PipelineConfig::PipelineConfig() {
    cnn.learning_rate = 1e-3f;
    cnn.epochs = 30;
    cnn.batch_size = 64;
    resnet.learning_rate = 1e-4f;
    resnet.epochs = 50;
    resnet.batch_size = 16;
}

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw DataError("config: unknown key '" + key + "' in " + where);
}

AugmentConfig parse_augment(const nlohmann::json& j) {
    check_keys(j,
               {"enabled", "flip_horizontal", "flip_vertical", "rotation_fraction",
                "zoom_fraction", "contrast_fraction"},
               "augmentation");
    AugmentConfig a;
    a.enabled = j.value("enabled", false);
    a.flip_horizontal = j.value("flip_horizontal", false);
    a.flip_vertical = j.value("flip_vertical", false);
    a.rotation_fraction = j.value("rotation_fraction", 0.0f);
    a.zoom_fraction = j.value("zoom_fraction", 0.0f);
    a.contrast_fraction = j.value("contrast_fraction", 0.0f);
    return a;
}

TrainConfig parse_train(const nlohmann::json& j, TrainConfig base, const std::string& where) {
    check_keys(j,
               {"learning_rate", "epochs", "batch_size", "patience", "monitor", "seed",
                "augmentation"},
               where);
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.epochs = j.value("epochs", base.epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.patience = j.value("patience", base.patience);
    base.seed = j.value("seed", base.seed);
    if (j.contains("monitor")) {
        std::string m = j.at("monitor").get<std::string>();
        if (m == "val_accuracy")
            base.monitor = Monitor::val_accuracy;
        else if (m == "val_loss")
            base.monitor = Monitor::val_loss;
        else
            throw DataError("config: unknown monitor '" + m + "' in " + where);
    }
    if (j.contains("augmentation")) base.augmentation = parse_augment(j.at("augmentation"));
    return base;
}

template <class T>
std::vector<T> parse_list(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.empty())
        throw DataError("config: " + where + " must be a non-empty array");
    std::vector<T> out;
    for (const auto& v : j) out.push_back(v.get<T>());
    return out;
}

StackingSettings parse_stacking(const nlohmann::json& j, StackingSettings base) {
    check_keys(j, {"grid", "k_folds", "n_rounds", "lambda", "seed", "meta_fraction"},
               "stacking");
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        check_keys(g, {"max_depth", "learning_rate", "min_child_weight", "subsample"},
                   "stacking.grid");
        if (g.contains("max_depth"))
            base.grid.max_depth = parse_list<int>(g.at("max_depth"), "grid.max_depth");
        if (g.contains("learning_rate"))
            base.grid.learning_rate = parse_list<float>(g.at("learning_rate"),
                                                        "grid.learning_rate");
        if (g.contains("min_child_weight"))
            base.grid.min_child_weight = parse_list<float>(g.at("min_child_weight"),
                                                           "grid.min_child_weight");
        if (g.contains("subsample"))
            base.grid.subsample = parse_list<float>(g.at("subsample"), "grid.subsample");
    }
    base.k_folds = j.value("k_folds", base.k_folds);
    base.n_rounds = j.value("n_rounds", base.n_rounds);
    base.lambda = j.value("lambda", base.lambda);
    base.seed = j.value("seed", base.seed);
    base.meta_fraction = j.value("meta_fraction", base.meta_fraction);
    return base;
}

std::string out_path(const PipelineConfig& cfg, const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, text.data(), text.size());
}

std::string read_text(const std::string& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void require_field(const std::string& value, const char* field, const char* command) {
    if (value.empty())
        throw DataError(std::string("config: ") + field + " is required for " + command);
}

// ----- stage helpers -----

struct NamedSplit {
    DataSplit data;
    std::vector<std::string> paths;
};

// Materializes one side of the split in manifest order (classes ascending,
// paths ascending within each class).
NamedSplit load_split_images(const DatasetManifest& manifest, const SplitAssignment& split,
                             Split which, int size) {
    std::vector<const ImageRecord*> picks;
    for (const auto& records : manifest.classes)
        for (const ImageRecord& r : records) {
            if (r.status != RecordStatus::valid) continue;
            auto it = split.part.find(r.path);
            if (it == split.part.end())
                throw DataError("split assignment is missing record: " + r.path);
            if (it->second == which) picks.push_back(&r);
        }
    if (picks.empty()) throw DataError("split side has no images");

    NamedSplit out;
    out.data.x = Tensor({(int)picks.size(), size, size, 3});
    const int64_t row = (int64_t)size * size * 3;
    for (size_t i = 0; i < picks.size(); ++i) {
        Tensor img = decode_and_resize(picks[i]->path, size);
        std::copy_n(img.data(), row, out.data.x.data() + (int64_t)i * row);
        out.data.y.push_back((int)picks[i]->class_label);
        out.paths.push_back(picks[i]->path);
    }
    return out;
}

BuiltModel model_from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    BuiltModel m;
    m.spec = std::move(ck.spec);
    m.weights = std::move(ck.weights);
    return m;
}

std::string checkpoint_name(const std::string& model) { return "checkpoint_" + model + ".bin"; }

// ----- subcommands -----

int cmd_fetch(const PipelineConfig& cfg) {
    require_field(cfg.raw_root, "raw_root", "fetch");
    if (cfg.url_lists.empty()) throw DataError("config: url_lists is required for fetch");
    DatasetManifest fetched;
    for (const auto& [class_name, list_path] : cfg.url_lists) {
        std::optional<ClassLabel> label = class_from_string(class_name);
        if (!label) throw DataError("config: unknown class '" + class_name + "' in url_lists");
        std::vector<std::string> urls = read_url_list(list_path);
        std::string dest = (fs::path(cfg.raw_root) / class_name).string();
        std::vector<ImageRecord> records = fetch_urls(urls, dest, *label);
        for (ImageRecord& r : records)
            fetched.classes[(size_t)*label].push_back(std::move(r));
        std::printf("fetch: %s: %zu urls\n", class_name.c_str(), urls.size());
    }
    fetched.recount();
    write_manifest(fetched, out_path(cfg, "fetch.jsonl"));
    std::printf("fetch: wrote %s\n", out_path(cfg, "fetch.jsonl").c_str());
    return 0;
}

int cmd_clean(const PipelineConfig& cfg) {
    require_field(cfg.raw_root, "raw_root", "clean");
    std::set<std::string> exclude;
    if (!cfg.exclusion_list.empty()) exclude = read_exclusion_list(cfg.exclusion_list);
    DatasetManifest manifest = ingest_folders(cfg.raw_root, exclude);
    write_manifest(manifest, out_path(cfg, "manifest.jsonl"));
    std::fputs(render_counts_table(manifest).c_str(), stdout);
    return 0;
}

int cmd_split(const PipelineConfig& cfg) {
    DatasetManifest manifest = read_manifest(out_path(cfg, "manifest.jsonl"));
    SplitAssignment split = stratified_split(manifest, cfg.train_fraction, cfg.split_seed);
    write_split_csv(split, out_path(cfg, "split.csv"));
    int64_t train = 0, test = 0;
    for (const auto& [path, side] : split.part) (side == Split::train ? train : test) += 1;
    std::printf("split: %lld train / %lld test (fraction %.9g, seed %llu)\n", (long long)train,
                (long long)test, (double)cfg.train_fraction,
                (unsigned long long)cfg.split_seed);
    return 0;
}

int cmd_train(const PipelineConfig& cfg, const std::string& model_name) {
    DatasetManifest manifest = read_manifest(out_path(cfg, "manifest.jsonl"));
    SplitAssignment split = read_split_csv(out_path(cfg, "split.csv"));
    NamedSplit train = load_split_images(manifest, split, Split::train, cfg.image_size);
    NamedSplit val = load_split_images(manifest, split, Split::test, cfg.image_size);

    TrainConfig tc = model_name == "cnn" ? cfg.cnn : cfg.resnet;
    tc.checkpoint_path = out_path(cfg, checkpoint_name(model_name));
    BuiltModel model = model_name == "cnn"
                           ? build_baseline_cnn(cfg.image_size, cfg.image_size, 3, 4, tc.seed)
                           : build_resnet(cfg.image_size, cfg.image_size, 3, 4, tc.seed);

    FitResult r = fit(model, train.data, val.data, tc);
    write_history_csv(r.history, out_path(cfg, "history_" + model_name + ".csv"));
    const EpochRecord& best = r.history.records[(size_t)r.history.best_epoch - 1];
    std::printf("train %s: best epoch %d (val_acc %.9g), stopped after %d\n", model_name.c_str(),
                r.history.best_epoch, (double)best.val_acc, r.history.stopped_epoch);
    return 0;
}

// Stacked rows for the held-out test side, in split order, from the two base
// checkpoints. Shared by `stack` and `evaluate stacking`.
struct StackedSource {
    std::vector<StackedRecord> stacked;
    std::vector<ArgmaxRecord> argmax;
    std::vector<std::string> paths;
};

StackedSource build_stacked_source(const PipelineConfig& cfg) {
    DatasetManifest manifest = read_manifest(out_path(cfg, "manifest.jsonl"));
    SplitAssignment split = read_split_csv(out_path(cfg, "split.csv"));
    BuiltModel m1 = model_from_checkpoint(out_path(cfg, checkpoint_name("cnn")));
    BuiltModel m2 = model_from_checkpoint(out_path(cfg, checkpoint_name("resnet")));
    if (m1.spec.input_h != m2.spec.input_h || m1.spec.input_w != m2.spec.input_w)
        throw DataError("base checkpoints disagree on input size");
    NamedSplit test = load_split_images(manifest, split, Split::test, m1.spec.input_h);

    StackedSource out;
    out.stacked = build_stacked_dataset(m1, m2, test.data);
    out.argmax = argmax_labels(out.stacked);
    out.paths = std::move(test.paths);
    return out;
}

int cmd_stack(const PipelineConfig& cfg) {
    StackedSource src = build_stacked_source(cfg);
    write_text(out_path(cfg, "stacked.csv"), stacked_to_csv(src.stacked));
    write_text(out_path(cfg, "argmax.csv"), argmax_to_csv(src.argmax));

    std::vector<int> truths(src.argmax.size());
    for (size_t i = 0; i < src.argmax.size(); ++i) truths[i] = src.argmax[i].truth;
    MetaSplitIndices idx =
        split_meta_indices(truths, cfg.stacking.meta_fraction, cfg.stacking.seed);
    std::vector<ArgmaxRecord> meta_train;
    for (size_t i : idx.train) meta_train.push_back(src.argmax[i]);

    GridSearchResult grid =
        grid_search_cv(meta_train, cfg.stacking.grid, cfg.stacking.k_folds,
                       cfg.stacking.n_rounds, cfg.stacking.lambda, cfg.stacking.seed);
    write_text(out_path(cfg, "gridsearch.csv"), grid_to_csv(grid.table));
    save_gbt(grid.model, out_path(cfg, "meta_gbt.bin"));

    double best_mean = 0;
    for (const GridCell& c : grid.table)
        if (c.config.max_depth == grid.best.max_depth &&
            c.config.learning_rate == grid.best.learning_rate &&
            c.config.min_child_weight == grid.best.min_child_weight &&
            c.config.subsample == grid.best.subsample)
            best_mean = c.mean_accuracy;
    std::printf("stack: %zu rows, meta train %zu, best depth %d lr %.9g (cv acc %.9g)\n",
                src.stacked.size(), meta_train.size(), grid.best.max_depth,
                (double)grid.best.learning_rate, best_mean);
    return 0;
}

std::string predictions_csv(const std::vector<std::string>& paths,
                            const std::vector<int>& truths, const std::vector<int>& preds) {
    std::string out = "path,truth,pred\n";
    for (size_t i = 0; i < paths.size(); ++i) {
        out += paths[i];
        out += ',';
        out += class_letter(class_from_code(truths[i]));
        out += ',';
        out += class_letter(class_from_code(preds[i]));
        out += '\n';
    }
    return out;
}

int cmd_evaluate(const PipelineConfig& cfg, const std::string& model_name) {
    std::vector<std::string> paths;
    std::vector<int> truths, preds;

    if (model_name == "stacking") {
        StackedSource src = build_stacked_source(cfg);
        GBTModel meta = load_gbt(out_path(cfg, "meta_gbt.bin"));
        std::vector<int> all_truths(src.argmax.size());
        for (size_t i = 0; i < src.argmax.size(); ++i) all_truths[i] = src.argmax[i].truth;
        MetaSplitIndices idx =
            split_meta_indices(all_truths, cfg.stacking.meta_fraction, cfg.stacking.seed);
        for (size_t i : idx.test) {
            const ArgmaxRecord& r = src.argmax[i];
            paths.push_back(src.paths[i]);
            truths.push_back(r.truth);
            preds.push_back(gbt_predict(meta, r.pred1, r.pred2).label);
        }
    } else {
        DatasetManifest manifest = read_manifest(out_path(cfg, "manifest.jsonl"));
        SplitAssignment split = read_split_csv(out_path(cfg, "split.csv"));
        BuiltModel model = model_from_checkpoint(out_path(cfg, checkpoint_name(model_name)));
        NamedSplit test = load_split_images(manifest, split, Split::test, model.spec.input_h);
        EvalResult ev = evaluate_split(model, test.data);
        paths = std::move(test.paths);
        truths = test.data.y;
        for (size_t i = 0; i < truths.size(); ++i)
            preds.push_back(argmax_row(ev.probs.data() + i * 4, 4));
    }

    write_text(out_path(cfg, "predictions_" + model_name + ".csv"),
               predictions_csv(paths, truths, preds));
    ConfusionMatrix cm = confusion_matrix(truths, preds);
    ClassificationReport report = classification_report(cm, model_name);
    write_text(out_path(cfg, "report_" + model_name + ".json"), report_to_json(report));
    std::fputs(render_confusion(cm).c_str(), stdout);
    std::fputs(render_report(report).c_str(), stdout);
    return 0;
}

int cmd_report(const PipelineConfig& cfg) {
    std::vector<ClassificationReport> reports;
    for (const char* name : {"cnn", "resnet", "stacking"}) {
        std::string path = out_path(cfg, std::string("report_") + name + ".json");
        if (fs::exists(path)) reports.push_back(report_from_json(read_text(path)));
    }
    if (reports.empty()) throw DataError("report: no report_<model>.json files in output dir");
    write_text(out_path(cfg, "compare_f1.csv"), compare_f1_csv(reports));
    std::printf("report: compared %zu models\n", reports.size());
    return 0;
}

} // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config parse: " + std::string(e.what()));
    }
    try {
        check_keys(doc,
                   {"raw_root", "exclusion_list", "url_lists", "image_size", "split", "cnn",
                    "resnet", "stacking", "output_dir"},
                   "config");
        PipelineConfig cfg;
        cfg.raw_root = doc.value("raw_root", cfg.raw_root);
        cfg.exclusion_list = doc.value("exclusion_list", cfg.exclusion_list);
        if (doc.contains("url_lists"))
            for (const auto& [key, value] : doc.at("url_lists").items())
                cfg.url_lists[key] = value.get<std::string>();
        cfg.image_size = doc.value("image_size", cfg.image_size);
        if (cfg.image_size < 8) throw DataError("config: image_size must be >= 8");
        if (doc.contains("split")) {
            const auto& s = doc.at("split");
            check_keys(s, {"train_fraction", "seed"}, "split");
            cfg.train_fraction = s.value("train_fraction", cfg.train_fraction);
            cfg.split_seed = s.value("seed", cfg.split_seed);
        }
        if (!(cfg.train_fraction > 0.0f && cfg.train_fraction < 1.0f))
            throw DataError("config: split.train_fraction must be in (0,1)");
        if (doc.contains("cnn")) cfg.cnn = parse_train(doc.at("cnn"), cfg.cnn, "cnn");
        if (doc.contains("resnet"))
            cfg.resnet = parse_train(doc.at("resnet"), cfg.resnet, "resnet");
        if (doc.contains("stacking"))
            cfg.stacking = parse_stacking(doc.at("stacking"), cfg.stacking);
        cfg.output_dir = doc.value("output_dir", cfg.output_dir);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config parse: " + std::string(e.what()));
    }
}

void write_split_csv(const SplitAssignment& split, const std::string& path) {
    std::string out = "# train_fraction=";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g seed=%llu\n", (double)split.train_fraction,
                  (unsigned long long)split.seed);
    out += buf;
    out += "path,split\n";
    for (const auto& [p, side] : split.part) {
        out += p;
        out += side == Split::train ? ",train\n" : ",test\n";
    }
    write_text(path, out);
}

SplitAssignment read_split_csv(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    SplitAssignment out;
    if (!std::getline(in, line) || line.rfind("# train_fraction=", 0) != 0)
        throw DataError("split csv: missing metadata line");
    unsigned long long seed = 0;
    double fraction = 0;
    if (std::sscanf(line.c_str(), "# train_fraction=%lf seed=%llu", &fraction, &seed) != 2)
        throw DataError("split csv: malformed metadata line");
    out.train_fraction = (float)fraction;
    out.seed = seed;
    if (!std::getline(in, line) || line != "path,split")
        throw DataError("split csv: missing header");
    size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0)
            throw DataError("split csv line " + std::to_string(lineno) + ": malformed row");
        std::string side = line.substr(comma + 1);
        std::string p = line.substr(0, comma);
        if (side == "train")
            out.part[p] = Split::train;
        else if (side == "test")
            out.part[p] = Split::test;
        else
            throw DataError("split csv line " + std::to_string(lineno) + ": unknown side '" +
                            side + "'");
    }
    if (out.part.empty()) throw DataError("split csv: no rows");
    return out;
}

int run_command(int argc, const char* const* argv) {
    CLI::App app{"disaster image classification pipeline"};
    app.require_subcommand(1);

    std::string config_path, output_dir, model_name;
    int threads = 0;
    uint64_t seed = 0;
    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--output-dir", output_dir,
                   "artifact directory (overrides config and DSTK_OUTPUT_DIR)");
    app.add_option("--threads", threads, "worker threads; 1 is the deterministic mode");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "override every configured seed");

    CLI::App* fetch = app.add_subcommand("fetch", "download URL lists into the raw root");
    CLI::App* clean = app.add_subcommand("clean", "validate, dedup and write the manifest");
    CLI::App* split = app.add_subcommand("split", "assign train/test partitions");
    CLI::App* train = app.add_subcommand("train", "train one model to a checkpoint");
    CLI::App* stack = app.add_subcommand("stack", "stack base predictions, fit the meta-model");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a model on its held-out rows");
    CLI::App* report = app.add_subcommand("report", "cross-model F1 comparison CSV");
    for (CLI::App* sub : {fetch, clean, split, train, stack, evaluate, report})
        sub->fallthrough();
    train->add_option("--model", model_name, "cnn or resnet")->required();
    evaluate->add_option("--model", model_name, "cnn, resnet or stacking")->required();

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
        if (!output_dir.empty())
            cfg.output_dir = output_dir;
        else if (cfg.output_dir.empty()) {
            const char* env = std::getenv("DSTK_OUTPUT_DIR");
            cfg.output_dir = env && *env ? env : ".";
        }
        std::error_code ec;
        fs::create_directories(cfg.output_dir, ec);
        if (ec) throw IoError("cannot create output dir: " + cfg.output_dir);
        if (*seed_opt) {
            cfg.split_seed = seed;
            cfg.cnn.seed = seed;
            cfg.resnet.seed = seed;
            cfg.stacking.seed = seed;
        }
        if (threads > 0) set_thread_count(threads);

        if (*fetch) return cmd_fetch(cfg);
        if (*clean) return cmd_clean(cfg);
        if (*split) return cmd_split(cfg);
        if (*train) {
            if (model_name != "cnn" && model_name != "resnet")
                throw DataError("train: --model must be cnn or resnet");
            return cmd_train(cfg, model_name);
        }
        if (*stack) return cmd_stack(cfg);
        if (*evaluate) {
            if (model_name != "cnn" && model_name != "resnet" && model_name != "stacking")
                throw DataError("evaluate: --model must be cnn, resnet or stacking");
            return cmd_evaluate(cfg, model_name);
        }
        if (*report) return cmd_report(cfg);
        return 1; // unreachable with require_subcommand(1)
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    }
}

} // namespace dstk
