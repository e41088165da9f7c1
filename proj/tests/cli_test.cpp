#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <httplib.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dstk/checkpoint.hpp"
#include "dstk/cli.hpp"
#include "dstk/errors.hpp"
#include "dstk/gbt.hpp"
#include "dstk/image.hpp"
#include "dstk/metrics.hpp"
#include "dstk/stacking.hpp"
#include "dstk/synth.hpp"

using namespace dstk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dstk_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    if (!fs::exists(p)) return {};
    std::vector<uint8_t> b = read_file_bytes(p.string());
    return std::string(b.begin(), b.end());
}

void write_text_file(const fs::path& p, const std::string& s) {
    write_file_bytes(p.string(), s.data(), s.size());
}

struct RunResult {
    int code = -1;
    std::string out, err;
};

// Spawns the installed binary through the shell, captures both streams.
RunResult run_cli(const std::string& args, const fs::path& scratch) {
    fs::path so = scratch / "run_stdout.txt";
    fs::path se = scratch / "run_stderr.txt";
    std::string cmd =
        std::string(DSTK_CLI_PATH) + " " + args + " >" + so.string() + " 2>" + se.string();
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(so);
    r.err = slurp(se);
    return r;
}

// The shared test config: short trainings, a single grid combo.
std::string make_config(const fs::path& root, const fs::path& out, int image_size) {
    return std::string("{\n") + "  \"raw_root\": \"" + (root / "raw").string() + "\",\n" +
           "  \"image_size\": " + std::to_string(image_size) + ",\n" +
           "  \"split\": {\"train_fraction\": 0.8, \"seed\": 11},\n" +
           "  \"cnn\": {\"learning_rate\": 0.001, \"epochs\": 2, \"batch_size\": 16, "
           "\"patience\": 5, \"seed\": 1},\n" +
           "  \"resnet\": {\"learning_rate\": 0.0001, \"epochs\": 1, \"batch_size\": 8, "
           "\"patience\": 5, \"seed\": 2},\n" +
           "  \"stacking\": {\"grid\": {\"max_depth\": [2], \"learning_rate\": [0.1],\n" +
           "                 \"min_child_weight\": [1.0], \"subsample\": [1.0]},\n" +
           "                 \"k_folds\": 2, \"n_rounds\": 20, \"meta_fraction\": 0.8},\n" +
           "  \"output_dir\": \"" + out.string() + "\"\n}\n";
}

int letter_code(char c) { return (int)std::string("EFVW").find(c); }

struct Pred {
    std::string path;
    int truth = -1, pred = -1;
};

std::vector<Pred> parse_predictions(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(line == "path,truth,pred");
    std::vector<Pred> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t c2 = line.rfind(',');
        REQUIRE(c2 != std::string::npos);
        size_t c1 = line.rfind(',', c2 - 1);
        REQUIRE(c1 != std::string::npos);
        out.push_back({line.substr(0, c1), letter_code(line[c1 + 1]), letter_code(line[c2 + 1])});
    }
    return out;
}

} // namespace

TEST_CASE("exit codes: usage, data and io failures") {
    REQUIRE(fs::exists(DSTK_CLI_PATH));
    TempDir tmp("cli_codes");
    CHECK(run_cli("--help", tmp.path).code == 0);
    CHECK(run_cli("", tmp.path).code == 1);      // a subcommand is required
    CHECK(run_cli("bogus", tmp.path).code == 1); // unknown subcommand
    CHECK(run_cli("train", tmp.path).code == 1); // --model is required

    write_text_file(tmp.path / "bad.json", "{\"bogus\": 1}\n");
    RunResult bad = run_cli("--config " + (tmp.path / "bad.json").string() + " clean", tmp.path);
    CHECK(bad.code == 2);
    CHECK(bad.err.find("unknown key") != std::string::npos);

    write_text_file(tmp.path / "mangled.json", "not json{{\n");
    CHECK(run_cli("--config " + (tmp.path / "mangled.json").string() + " clean", tmp.path).code ==
          2);

    write_text_file(tmp.path / "empty.json", "{}\n");
    std::string empty = "--config " + (tmp.path / "empty.json").string();
    CHECK(run_cli(empty + " clean", tmp.path).code == 2); // raw_root missing
    CHECK(run_cli(empty + " train --model vgg", tmp.path).code == 2);

    RunResult io = run_cli("--config /definitely/not/there.json clean", tmp.path);
    CHECK(io.code == 3);
    CHECK(io.err.find("io error") != std::string::npos);

    // train in a fresh output dir: the manifest artifact does not exist yet
    write_synth_corpus((tmp.path / "raw").string(), 2, 32, 5);
    write_text_file(tmp.path / "config.json", make_config(tmp.path, tmp.path / "out", 32));
    CHECK(run_cli("--config " + (tmp.path / "config.json").string() + " train --model cnn",
                  tmp.path)
              .code == 3);
}

TEST_CASE("clean writes the manifest and prints the accounting table") {
    TempDir tmp("cli_clean");
    write_synth_corpus((tmp.path / "raw").string(), 8, 32, 5);
    write_text_file(tmp.path / "config.json", make_config(tmp.path, tmp.path / "out", 32));
    std::string base = "--config " + (tmp.path / "config.json").string();

    RunResult r = run_cli(base + " clean", tmp.path);
    REQUIRE(r.code == 0);
    DatasetManifest m = read_manifest((tmp.path / "out" / "manifest.jsonl").string());
    CHECK(m.total_before == 32);
    CHECK(m.total_after >= 4);
    CHECK(m.total_after <= 32);
    CHECK(r.out == render_counts_table(m)); // stdout is exactly the accounting table

    // rerun: byte-identical manifest
    std::string first = slurp(tmp.path / "out" / "manifest.jsonl");
    REQUIRE(run_cli(base + " clean", tmp.path).code == 0);
    CHECK(slurp(tmp.path / "out" / "manifest.jsonl") == first);
}

TEST_CASE("split artifact round-trips and honors the seed override") {
    TempDir tmp("cli_split");
    write_synth_corpus((tmp.path / "raw").string(), 8, 32, 5);
    write_text_file(tmp.path / "config.json", make_config(tmp.path, tmp.path / "out", 32));
    std::string base = "--config " + (tmp.path / "config.json").string();
    REQUIRE(run_cli(base + " clean", tmp.path).code == 0);

    RunResult r = run_cli(base + " split", tmp.path);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("split: ") == 0);

    DatasetManifest m = read_manifest((tmp.path / "out" / "manifest.jsonl").string());
    SplitAssignment want = stratified_split(m, 0.8f, 11);
    SplitAssignment got = read_split_csv((tmp.path / "out" / "split.csv").string());
    CHECK(got.part == want.part);
    CHECK(got.seed == 11);
    CHECK(got.train_fraction == doctest::Approx(0.8f));

    // --seed placed after the subcommand falls through to the app level
    std::string bytes11 = slurp(tmp.path / "out" / "split.csv");
    REQUIRE(run_cli(base + " split --seed 99", tmp.path).code == 0);
    std::string bytes99 = slurp(tmp.path / "out" / "split.csv");
    CHECK(bytes99 != bytes11);
    CHECK(bytes99.find("seed=99") != std::string::npos);
    SplitAssignment got99 = read_split_csv((tmp.path / "out" / "split.csv").string());
    CHECK(got99.part == stratified_split(m, 0.8f, 99).part);
}

TEST_CASE("output dir: flag beats config beats environment") {
    TempDir tmp("cli_outdir");
    write_synth_corpus((tmp.path / "raw").string(), 4, 32, 5);
    std::string raw = (tmp.path / "raw").string();
    write_text_file(tmp.path / "nodir.json", "{\"raw_root\": \"" + raw + "\"}\n");
    std::string base = "--config " + (tmp.path / "nodir.json").string();

    REQUIRE(run_cli(base + " --output-dir " + (tmp.path / "via_flag").string() + " clean",
                    tmp.path)
                .code == 0);
    CHECK(fs::exists(tmp.path / "via_flag" / "manifest.jsonl"));

    std::string env_cmd = "DSTK_OUTPUT_DIR=" + (tmp.path / "via_env").string() + " " +
                          DSTK_CLI_PATH + " " + base + " clean >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
    CHECK(fs::exists(tmp.path / "via_env" / "manifest.jsonl"));

    write_text_file(tmp.path / "withdir.json",
                    "{\"raw_root\": \"" + raw + "\", \"output_dir\": \"" +
                        (tmp.path / "via_cfg").string() + "\"}\n");
    std::string cfg_cmd = "DSTK_OUTPUT_DIR=" + (tmp.path / "ignored").string() + " " +
                          DSTK_CLI_PATH + " --config " + (tmp.path / "withdir.json").string() +
                          " clean >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cfg_cmd.c_str())) == 0);
    CHECK(fs::exists(tmp.path / "via_cfg" / "manifest.jsonl"));
    CHECK_FALSE(fs::exists(tmp.path / "ignored"));
}

TEST_CASE("fetch downloads url lists into the raw root") {
    auto png = encode_png(synth_pattern_image(ClassLabel::earthquake, 32, 3));
    httplib::Server server;
    server.Get("/good.png", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread runner([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    TempDir tmp("cli_fetch");
    std::string host = "http://127.0.0.1:" + std::to_string(port);
    write_text_file(tmp.path / "urls.txt", host + "/good.png\n" + host + "/missing.png\n");
    write_text_file(tmp.path / "config.json",
                    "{\"raw_root\": \"" + (tmp.path / "raw").string() +
                        "\", \"url_lists\": {\"earthquake\": \"" +
                        (tmp.path / "urls.txt").string() + "\"}, \"output_dir\": \"" +
                        (tmp.path / "out").string() + "\"}\n");
    RunResult r = run_cli("--config " + (tmp.path / "config.json").string() + " fetch", tmp.path);
    server.stop();
    runner.join();

    REQUIRE(r.code == 0);
    CHECK(r.out.find("fetch: earthquake: 2 urls") != std::string::npos);
    DatasetManifest m = read_manifest((tmp.path / "out" / "fetch.jsonl").string());
    REQUIRE(m.classes[0].size() == 2);
    CHECK(m.classes[0][0].status == RecordStatus::pending);
    CHECK(m.classes[0][1].status == RecordStatus::fetch_failed);
    CHECK(fs::exists(m.classes[0][0].path));
    CHECK(m.classes[0][0].path.rfind((tmp.path / "raw" / "earthquake").string(), 0) == 0);
    CHECK(read_file_bytes(m.classes[0][0].path) == png);
}

TEST_CASE("full pipeline composes stage by stage") {
    TempDir tmp("cli_pipe");
    write_synth_corpus((tmp.path / "raw").string(), 30, 32, 7);
    write_text_file(tmp.path / "config.json", make_config(tmp.path, tmp.path / "out", 32));
    std::string base = "--config " + (tmp.path / "config.json").string();
    fs::path out = tmp.path / "out";

    REQUIRE(run_cli(base + " clean", tmp.path).code == 0);
    REQUIRE(run_cli(base + " split", tmp.path).code == 0);
    REQUIRE(run_cli(base + " train --model cnn", tmp.path).code == 0);

    // retraining reproduces both artifacts byte for byte
    std::string hist1 = slurp(out / "history_cnn.csv");
    std::string ck1 = slurp(out / "checkpoint_cnn.bin");
    REQUIRE(!hist1.empty());
    REQUIRE(run_cli(base + " train --model cnn", tmp.path).code == 0);
    CHECK(slurp(out / "history_cnn.csv") == hist1);
    CHECK(slurp(out / "checkpoint_cnn.bin") == ck1);

    REQUIRE(run_cli(base + " train --model resnet", tmp.path).code == 0);
    Checkpoint ck = load_checkpoint((out / "checkpoint_cnn.bin").string());
    CHECK(ck.spec.input_h == 32);

    REQUIRE(run_cli(base + " stack", tmp.path).code == 0);
    std::vector<StackedRecord> stacked = parse_stacked_csv(slurp(out / "stacked.csv"));
    std::vector<ArgmaxRecord> am = parse_argmax_csv(slurp(out / "argmax.csv"));
    REQUIRE(!stacked.empty());
    CHECK(am.size() == stacked.size());
    SplitAssignment split = read_split_csv((out / "split.csv").string());
    size_t test_rows = 0;
    for (const auto& [p, side] : split.part) test_rows += side == Split::test;
    CHECK(stacked.size() == test_rows);

    GBTModel meta = load_gbt((out / "meta_gbt.bin").string());
    std::string grid_csv = slurp(out / "gridsearch.csv");
    CHECK(std::count(grid_csv.begin(), grid_csv.end(), '\n') == 2); // header + one combo

    RunResult ev = run_cli(base + " evaluate --model cnn", tmp.path);
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("truth\\pred") != std::string::npos);
    std::vector<Pred> preds = parse_predictions(slurp(out / "predictions_cnn.csv"));
    REQUIRE(preds.size() == test_rows);
    int hits = 0;
    for (const Pred& p : preds) hits += p.truth == p.pred;
    ClassificationReport rep = report_from_json(slurp(out / "report_cnn.json"));
    CHECK(rep.model == "cnn");
    CHECK(rep.accuracy == doctest::Approx((double)hits / (double)preds.size()).epsilon(1e-12));

    REQUIRE(run_cli(base + " evaluate --model resnet", tmp.path).code == 0);
    REQUIRE(run_cli(base + " evaluate --model stacking", tmp.path).code == 0);

    // stacking is scored on the meta-test rows only, via the stored meta model
    std::vector<Pred> spreds = parse_predictions(slurp(out / "predictions_stacking.csv"));
    std::vector<int> truths;
    for (const ArgmaxRecord& r : am) truths.push_back(r.truth);
    MetaSplitIndices idx = split_meta_indices(truths, 0.8f, 0);
    REQUIRE(spreds.size() == idx.test.size());
    for (size_t i = 0; i < idx.test.size(); ++i) {
        const ArgmaxRecord& r = am[idx.test[i]];
        CHECK(spreds[i].truth == r.truth);
        CHECK(spreds[i].pred == gbt_predict(meta, r.pred1, r.pred2).label);
    }

    REQUIRE(run_cli(base + " report", tmp.path).code == 0);
    std::istringstream cmp(slurp(out / "compare_f1.csv"));
    std::string line;
    REQUIRE(std::getline(cmp, line));
    CHECK(line == "class,cnn,resnet,stacking");
    int rows = 0;
    while (std::getline(cmp, line)) rows += !line.empty();
    CHECK(rows == 4);
}
