// Acceptance gate: each test case checks one numbered release criterion and
// prints a single "[acceptance] criterion N: PASS/FAIL" line. The cases are
// independent; CMake registers them as separate ctest entries via -tc.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dstk/checkpoint.hpp"
#include "dstk/dataset.hpp"
#include "dstk/gbt.hpp"
#include "dstk/image.hpp"
#include "dstk/metrics.hpp"
#include "dstk/optimizer.hpp"
#include "dstk/phash.hpp"
#include "dstk/rng.hpp"
#include "dstk/stacking.hpp"
#include "dstk/synth.hpp"
#include "dstk/tape.hpp"
#include "dstk/train.hpp"
#include "support/gradcheck.hpp"
#include "support/residual_fixture.hpp"
#include "support/tensors.hpp"

using namespace dstk;
using testsupport::rand_labels;
using testsupport::rand_tensor;
using testsupport::rand_tensor_signed;
using testsupport::spaced_permutation;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

// Collects the criterion's verdict and prints the summary line when the test
// case scope closes, even if a REQUIRE aborted the body early.
struct Criterion {
    int n;
    bool ok = true;
    explicit Criterion(int n) : n(n) {}
    ~Criterion() {
        if (std::uncaught_exceptions() > 0) ok = false;
        std::printf("[acceptance] criterion %d: %s\n", n, ok ? "PASS" : "FAIL");
        std::fflush(stdout);
    }
};

#define ACHECK(crit, ...)              \
    do {                               \
        bool achk_ok_ = (__VA_ARGS__); \
        CHECK(achk_ok_);               \
        (crit).ok &= achk_ok_;         \
    } while (0)

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dstk_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    if (!fs::exists(p)) return {};
    std::vector<uint8_t> b = read_file_bytes(p.string());
    return std::string(b.begin(), b.end());
}

Tensor probs_tensor(std::initializer_list<std::array<float, 4>> rows) {
    Tensor t({(int)rows.size(), 4});
    size_t i = 0;
    for (const auto& r : rows)
        for (float v : r) t.v[i++] = v;
    return t;
}

// dataset whose truth is an arbitrary function of the 16 (pred1, pred2)
// combos, with `copies` rows per combo
std::vector<ArgmaxRecord> lookup_dataset(const std::array<int, 16>& table, int copies) {
    std::vector<ArgmaxRecord> out;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            for (int k = 0; k < copies; ++k)
                out.push_back({a, b, table[(size_t)(a * 4 + b)]});
    return out;
}

// Seeded stratified 80/20 split of the synthetic tensors.
void split_synth(const SynthDataset& ds, uint64_t seed, int size, DataSplit& train,
                 DataSplit& val) {
    std::vector<size_t> tr_idx, va_idx;
    for (int c = 0; c < 4; ++c) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < ds.y.size(); ++i)
            if (ds.y[i] == c) idx.push_back(i);
        Rng rng(mix64(seed, (uint64_t)c));
        rng.shuffle(idx);
        size_t ntr = (size_t)llround(0.8 * (double)idx.size());
        for (size_t i = 0; i < idx.size(); ++i) (i < ntr ? tr_idx : va_idx).push_back(idx[i]);
    }
    const int64_t row = (int64_t)size * size * 3;
    train.x = Tensor({(int)tr_idx.size(), size, size, 3});
    val.x = Tensor({(int)va_idx.size(), size, size, 3});
    for (size_t i = 0; i < tr_idx.size(); ++i) {
        std::copy_n(ds.x.data() + (int64_t)tr_idx[i] * row, row,
                    train.x.data() + (int64_t)i * row);
        train.y.push_back(ds.y[tr_idx[i]]);
    }
    for (size_t i = 0; i < va_idx.size(); ++i) {
        std::copy_n(ds.x.data() + (int64_t)va_idx[i] * row, row, val.x.data() + (int64_t)i * row);
        val.y.push_back(ds.y[va_idx[i]]);
    }
}

// Trains until validation accuracy reaches `target`; returns the epoch that
// reached it, or -1 if `max_epochs` ran out.
int epochs_to_reach(BuiltModel& model, const DataSplit& train, const DataSplit& val,
                    const TrainConfig& tc, int max_epochs, float target, float* best_out) {
    AdamState adam = adam_init(model.weights);
    float best = 0;
    for (int e = 1; e <= max_epochs; ++e) {
        run_epoch(model, adam, train, tc, e);
        EvalResult ev = evaluate_split(model, val);
        best = std::max(best, ev.accuracy);
        std::printf("  epoch %2d: val_acc %.4f\n", e, (double)ev.accuracy);
        std::fflush(stdout);
        if (best >= target) {
            *best_out = best;
            return e;
        }
    }
    *best_out = best;
    return -1;
}

ImageU8 brightness(const ImageU8& img, float k) {
    ImageU8 out = img;
    for (auto& p : out.pix)
        p = (uint8_t)std::clamp((long)std::lround((float)p * k), 0l, 255l);
    return out;
}

ImageU8 contrast(const ImageU8& img, float k) {
    ImageU8 out = img;
    for (auto& p : out.pix)
        p = (uint8_t)std::clamp((long)std::lround(((float)p - 128.0f) * k + 128.0f), 0l, 255l);
    return out;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(DSTK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("criterion 1: gradient correctness against finite differences") {
    Criterion crit(1);
    auto t0 = clk::now();
    const int kSeeds = 20;

    for (int i = 0; i < kSeeds; ++i) {
        uint64_t seed = 100 + (uint64_t)i;

        { // dense
            std::vector<Tensor> leaves = {rand_tensor({3, 5}, seed),
                                          rand_tensor({5, 4}, seed + 10),
                                          rand_tensor({4}, seed + 20)};
            auto labels = rand_labels(3, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                return t.sparse_ce_loss(t.dense(ids[0], ids[1], ids[2]), labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // conv2d
            std::vector<Tensor> leaves = {
                rand_tensor({1, 4, 4, 2}, seed), rand_tensor({3, 3, 2, 2}, seed + 10),
                rand_tensor({2}, seed + 20), rand_tensor({32, 4}, seed + 30),
                rand_tensor({4}, seed + 40)};
            auto labels = rand_labels(1, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                int c = t.conv2d(ids[0], ids[1], ids[2], 1, Padding::same);
                return t.sparse_ce_loss(t.dense(t.flatten(c), ids[3], ids[4]), labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // relu, with magnitudes clear of the kink
            std::vector<Tensor> leaves = {rand_tensor_signed({3, 6}, seed),
                                          rand_tensor({6, 4}, seed + 10),
                                          rand_tensor({4}, seed + 20)};
            auto labels = rand_labels(3, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                return t.sparse_ce_loss(t.dense(t.relu(ids[0]), ids[1], ids[2]), labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // batch_norm in training mode
            std::vector<Tensor> leaves = {
                rand_tensor({6, 3}, seed), rand_tensor({3}, seed + 10, 0.5f, 1.5f),
                rand_tensor({3}, seed + 20), rand_tensor({3, 4}, seed + 30),
                rand_tensor({4}, seed + 40)};
            auto labels = rand_labels(6, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                Tensor rm({3}), rv = Tensor::full({3}, 1.0f);
                int z = t.batch_norm(ids[0], ids[1], ids[2], rm, rv, 0.99f, 1e-5f);
                return t.sparse_ce_loss(t.dense(z, ids[3], ids[4]), labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // max_pool2d over distinct spaced values (stable argmaxes)
            std::vector<Tensor> leaves = {spaced_permutation({1, 6, 6, 2}, seed),
                                          rand_tensor({18, 4}, seed + 10),
                                          rand_tensor({4}, seed + 20)};
            auto labels = rand_labels(1, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                int p = t.max_pool2d(ids[0], 2, 2, Padding::valid);
                return t.sparse_ce_loss(t.dense(t.flatten(p), ids[1], ids[2]), labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // global_avg_pool
            std::vector<Tensor> leaves = {rand_tensor({2, 2, 2, 3}, seed),
                                          rand_tensor({3, 4}, seed + 10, -2.0f, 2.0f),
                                          rand_tensor({4}, seed + 20)};
            auto labels = rand_labels(2, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                return t.sparse_ce_loss(t.dense(t.global_avg_pool(ids[0]), ids[1], ids[2]),
                                        labels);
            });
            ACHECK(crit, err < 1e-3);
        }
        { // softmax mid-graph and sparse_ce at the root
            std::vector<Tensor> leaves = {rand_tensor({3, 4}, seed),
                                          rand_tensor({4, 4}, seed + 10, -3.0f, 3.0f),
                                          rand_tensor({4}, seed + 20)};
            auto labels = rand_labels(3, 4, seed);
            double err = gradcheck::check(leaves, [labels](Tape& t, const std::vector<int>& ids) {
                return t.sparse_ce_loss(t.dense(t.softmax(ids[0]), ids[1], ids[2]), labels);
            });
            ACHECK(crit, err < 1e-3);

            std::vector<Tensor> lonly = {rand_tensor({4, 4}, seed + 2, -2.0f, 2.0f)};
            auto labels2 = rand_labels(4, 4, seed + 2);
            double err2 = gradcheck::check(lonly, [labels2](Tape& t, const std::vector<int>& ids) {
                return t.sparse_ce_loss(ids[0], labels2);
            });
            ACHECK(crit, err2 < 1e-3);
        }
    }

    // residual blocks through the model executor, margin-safe seeds only;
    // scored over the pooled parameter gradient (see check_model_global)
    uint64_t seed = 22;
    for (int rep = 0; rep < kSeeds; ++rep) {
        seed = testsupport::next_safe_residual_seed(seed);
        auto f = testsupport::make_residual_fixture(seed);
        ACHECK(crit, gradcheck::check_model_global(f.model, f.batch, f.labels) < 1e-3);
        ++seed;
    }

    double secs = seconds_since(t0);
    std::printf("criterion 1: %d seeds per op in %.1fs\n", kSeeds, secs);
    ACHECK(crit, secs <= 120.0);
}

TEST_CASE("criterion 2: synthetic end-to-end training") {
    Criterion crit(2);
    DataSplit train, val;
    {
        SynthDataset ds = synth_dataset(800, 64, 42);
        split_synth(ds, 7, 64, train, val);
    }
    ACHECK(crit, train.y.size() == 2560);
    ACHECK(crit, val.y.size() == 640);

    {
        auto t0 = clk::now();
        BuiltModel cnn = build_baseline_cnn(64, 64, 3, 4, 1);
        TrainConfig tc;
        tc.learning_rate = 1e-3f;
        tc.batch_size = 64;
        tc.seed = 1;
        float best = 0;
        std::printf("criterion 2: baseline cnn\n");
        int reached = epochs_to_reach(cnn, train, val, tc, 30, 0.95f, &best);
        double secs = seconds_since(t0);
        std::printf("criterion 2: cnn val_acc %.4f at epoch %d (%.0fs)\n", (double)best, reached,
                    secs);
        ACHECK(crit, reached > 0);
        ACHECK(crit, best >= 0.95f);
        ACHECK(crit, secs <= 900.0);
    }
    {
        auto t0 = clk::now();
        BuiltModel net = build_resnet(64, 64, 3, 4, 2);
        TrainConfig tc;
        tc.learning_rate = 1e-4f;
        tc.batch_size = 16;
        tc.seed = 2;
        float best = 0;
        std::printf("criterion 2: resnet\n");
        int reached = epochs_to_reach(net, train, val, tc, 50, 0.95f, &best);
        double secs = seconds_since(t0);
        std::printf("criterion 2: resnet val_acc %.4f at epoch %d (%.0fs)\n", (double)best,
                    reached, secs);
        ACHECK(crit, reached > 0);
        ACHECK(crit, best >= 0.95f);
        ACHECK(crit, secs <= 900.0);
    }
}

TEST_CASE("criterion 3: stacking beats both bases on disjoint planted errors") {
    Criterion crit(3);
    auto t0 = clk::now();

    // base 1 errs exactly on subset A, base 2 exactly on disjoint subset B
    std::vector<ArgmaxRecord> data;
    for (int i = 0; i < 40; ++i) data.push_back({1, 0, 0});
    for (int i = 0; i < 40; ++i) data.push_back({2, 3, 2});
    for (int i = 0; i < 80; ++i) {
        int c = i % 4;
        data.push_back({c, c, c});
    }

    MetaSplit ms = split_meta(data, 0.8f, 5);
    REQUIRE(!ms.test.empty());
    double acc1 = 0, acc2 = 0;
    for (const ArgmaxRecord& r : ms.test) {
        acc1 += r.pred1 == r.truth;
        acc2 += r.pred2 == r.truth;
    }
    acc1 /= (double)ms.test.size();
    acc2 /= (double)ms.test.size();
    ACHECK(crit, acc1 < 1.0);
    ACHECK(crit, acc2 < 1.0);

    GridSpec grid;
    grid.max_depth = {2, 4};
    grid.learning_rate = {0.3f};
    grid.min_child_weight = {1.0f};
    grid.subsample = {1.0f};
    GridSearchResult r = grid_search_cv(ms.train, grid, 4, 40, 1.0f, 13);
    double meta = gbt_accuracy(r.model, ms.test);
    std::printf("criterion 3: base %.3f / %.3f, meta %.3f\n", acc1, acc2, meta);
    ACHECK(crit, meta >= std::max(acc1, acc2));

    // per-combo predictions equal the majority vote over the training rows
    int64_t counts[16][4] = {};
    for (const ArgmaxRecord& rec : ms.train) ++counts[rec.pred1 * 4 + rec.pred2][rec.truth];
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            int64_t total = 0;
            int best = 0;
            for (int t = 0; t < 4; ++t) {
                total += counts[a * 4 + b][t];
                if (counts[a * 4 + b][t] > counts[a * 4 + b][best]) best = t;
            }
            if (total == 0) continue;
            ACHECK(crit, gbt_predict(r.model, a, b).label == best);
        }

    double secs = seconds_since(t0);
    ACHECK(crit, secs <= 60.0);
}

TEST_CASE("criterion 4: published probability rows map to the published labels") {
    Criterion crit(4);
    Tensor p1 = probs_tensor({{0.95f, 0.02f, 0.01f, 0.02f}, {0.0f, 0.01f, 0.0f, 0.99f}});
    Tensor p2 = probs_tensor({{0.96f, 0.0f, 0.03f, 0.01f}, {0.01f, 0.0f, 0.0f, 0.99f}});
    std::vector<StackedRecord> stacked = build_stacked_dataset(p1, p2, {0, 3});
    std::vector<ArgmaxRecord> am = argmax_labels(stacked);
    REQUIRE(am.size() == 2);
    ACHECK(crit, am[0].pred1 == 0); // earthquake
    ACHECK(crit, am[0].pred2 == 0); // earthquake
    ACHECK(crit, am[0].truth == 0); // E
    ACHECK(crit, am[1].pred1 == 3); // wildfire
    ACHECK(crit, am[1].pred2 == 3); // wildfire
    ACHECK(crit, am[1].truth == 3); // W
    ACHECK(crit, argmax_to_csv(am) == "pred1,pred2,truth\nE,E,E\nW,W,W\n");
}

TEST_CASE("criterion 5: early stopping stops at 55 and restores the epoch-35 peak") {
    Criterion crit(5);
    TempDir tmp("acc5");
    BuiltModel model = build_baseline_cnn(8, 8, 3, 4, 32);
    SynthDataset tr = synth_dataset(2, 8, 33);
    SynthDataset va = synth_dataset(1, 8, 34);
    DataSplit train{std::move(tr.x), std::move(tr.y)};
    DataSplit val{std::move(va.x), std::move(va.y)};

    TrainConfig cfg;
    cfg.epochs = 90;
    cfg.batch_size = 4;
    cfg.patience = 20;
    cfg.learning_rate = 1e-3f;
    cfg.checkpoint_path = tmp.file("ck.bin");

    // scripted monitor: rises to a peak at epoch 35, then never improves
    FitOptions opts;
    opts.scripted_monitor.resize(90);
    for (int e = 1; e <= 90; ++e)
        opts.scripted_monitor[(size_t)e - 1] =
            e <= 35 ? 0.5f + 0.01f * (float)e : 0.8f - 0.001f * (float)e;

    FitResult r = fit(model, train, val, cfg, opts);
    ACHECK(crit, r.history.best_epoch == 35);
    ACHECK(crit, r.history.stopped_epoch == 55);
    ACHECK(crit, (int)r.history.records.size() == 55);

    Checkpoint ck = load_checkpoint(tmp.file("ck.bin"));
    ACHECK(crit, ck.meta.epoch == 35);
    for (const auto& [name, t] : ck.weights.tensors)
        ACHECK(crit, model.weights.tensors.at(name).v == t.v);

    // predictions from the restored model equal the checkpoint's, bitwise
    Tensor probe = rand_tensor({2, 8, 8, 3}, 77, 0.0f, 1.0f);
    Tensor a = predict_proba(model.spec, model.weights, probe);
    Tensor b = predict_proba(ck.spec, ck.weights, probe);
    ACHECK(crit, a.v == b.v);
}

TEST_CASE("criterion 6: dedup equals the brute-force grouping oracle on 500 images") {
    Criterion crit(6);

    // 500 hashed images: seeded bases plus planted exact duplicates and
    // brightness/contrast near-duplicates, spread over the four classes
    DatasetManifest m;
    std::array<std::vector<uint64_t>, 4> hashes;
    int made = 0;
    uint64_t next_seed = 1;
    Rng plan(mix64(600, 0xacc));
    while (made < 500) {
        int c = made % 4;
        ImageU8 base = synth_pattern_image(class_from_code(c), 64, next_seed++);
        std::vector<ImageU8> group = {base};
        if (made + (int)group.size() < 500 && plan.bernoulli(0.3)) group.push_back(base); // exact
        if (made + (int)group.size() < 500 && plan.bernoulli(0.3))
            group.push_back(brightness(base, 1.06f));
        if (made + (int)group.size() < 500 && plan.bernoulli(0.3))
            group.push_back(contrast(base, 1.15f));
        for (const ImageU8& img : group) {
            char name[32];
            std::snprintf(name, sizeof name, "img_%03d.png", made);
            ImageRecord rec;
            rec.path = name;
            rec.class_label = class_from_code(c);
            rec.byte_size = 1;
            rec.format = ImageFormat::png;
            rec.phash = phash_of_image(img);
            rec.status = RecordStatus::valid;
            hashes[(size_t)c].push_back(*rec.phash);
            m.classes[(size_t)c].push_back(std::move(rec));
            ++made;
        }
    }
    // a few corrupt records participate in the accounting but not the dedup
    for (int c = 0; c < 4; ++c) {
        ImageRecord rec;
        rec.path = "broken_" + std::to_string(c) + ".png";
        rec.class_label = class_from_code(c);
        rec.byte_size = 1;
        rec.status = RecordStatus::corrupt;
        m.classes[(size_t)c].push_back(std::move(rec));
    }
    m.recount();
    REQUIRE(m.total_before == 504);

    DatasetManifest d = dedup_manifest(m); // threshold 0.75

    for (int c = 0; c < 4; ++c) {
        // oracle: connected components over pairs with similarity >= 0.75
        // (hamming <= 16); the smallest path in each component survives
        const auto& h = hashes[(size_t)c];
        size_t n = h.size();
        std::vector<std::vector<size_t>> adj(n);
        for (size_t a = 0; a < n; ++a)
            for (size_t b = a + 1; b < n; ++b)
                if (phash_similarity(h[a], h[b]) >= 0.75) {
                    adj[a].push_back(b);
                    adj[b].push_back(a);
                }
        std::vector<const ImageRecord*> valid;
        for (const ImageRecord& r : m.classes[(size_t)c])
            if (r.status == RecordStatus::valid) valid.push_back(&r);
        REQUIRE(valid.size() == n);

        std::set<std::string> expected;
        std::vector<bool> seen(n, false);
        for (size_t start = 0; start < n; ++start) {
            if (seen[start]) continue;
            std::vector<size_t> stack = {start}, comp;
            seen[start] = true;
            while (!stack.empty()) {
                size_t cur = stack.back();
                stack.pop_back();
                comp.push_back(cur);
                for (size_t nb : adj[cur])
                    if (!seen[nb]) {
                        seen[nb] = true;
                        stack.push_back(nb);
                    }
            }
            std::string best = valid[comp[0]]->path;
            for (size_t idx : comp) best = std::min(best, valid[idx]->path);
            expected.insert(best);
        }

        std::set<std::string> survivors;
        int64_t n_valid = 0, n_corrupt = 0, n_dup = 0;
        for (const ImageRecord& r : d.classes[(size_t)c]) {
            if (r.status == RecordStatus::valid) {
                survivors.insert(r.path);
                ++n_valid;
            } else if (r.status == RecordStatus::corrupt) {
                ++n_corrupt;
            } else if (r.status == RecordStatus::duplicate_removed) {
                ++n_dup;
            }
        }
        ACHECK(crit, survivors == expected);
        // before = valid + corrupt + duplicate_removed
        ACHECK(crit, d.counts[(size_t)c].before == n_valid + n_corrupt + n_dup);
        ACHECK(crit, d.counts[(size_t)c].after == n_valid);
        ACHECK(crit, n_dup > 0); // the planted near-duplicates actually grouped
    }
}

TEST_CASE("criterion 7: classification report equals the counting oracle") {
    Criterion crit(7);

    for (int trial = 0; trial < 1000; ++trial) {
        Rng rng(mix64(700, (uint64_t)trial));
        int n = 1 + (int)rng.below(300);
        std::vector<int> y((size_t)n), p((size_t)n);
        for (int i = 0; i < n; ++i) {
            y[(size_t)i] = (int)rng.below(4);
            p[(size_t)i] = (int)rng.below(4);
        }
        ConfusionMatrix cm = confusion_matrix(y, p);
        ClassificationReport rep = classification_report(cm, "trial");

        // independent counting oracle
        int64_t c[4][4] = {};
        for (int i = 0; i < n; ++i) ++c[y[(size_t)i]][p[(size_t)i]];
        int64_t trace = 0;
        bool all_ok = true;
        for (int k = 0; k < 4; ++k) {
            trace += c[k][k];
            int64_t row = 0, col = 0;
            for (int j = 0; j < 4; ++j) {
                row += c[k][j];
                col += c[j][k];
            }
            double P = col > 0 ? (double)c[k][k] / (double)col : 0.0;
            double R = row > 0 ? (double)c[k][k] / (double)row : 0.0;
            double F = P + R > 0 ? 2.0 * P * R / (P + R) : 0.0;
            const ClassMetrics& cls = rep.classes[(size_t)k];
            all_ok &= cls.precision == P && cls.recall == R && cls.f1 == F;
            all_ok &= cls.support == row;
            all_ok &= cls.precision_undefined == (col == 0);
            all_ok &= cls.recall_undefined == (row == 0);
            all_ok &= cls.f1_undefined == (P + R <= 0);
        }
        double acc = (double)trace / (double)n;
        all_ok &= rep.accuracy == acc;

        // micro-precision = micro-recall = accuracy: predicted totals and
        // truth totals both sum to n, so both micro ratios are trace/n
        int64_t pred_total = 0, truth_total = 0;
        for (int k = 0; k < 4; ++k) {
            pred_total += cm.col_sum(k);
            truth_total += cm.row_sum(k);
        }
        all_ok &= (double)trace / (double)pred_total == acc;
        all_ok &= (double)trace / (double)truth_total == acc;

        crit.ok &= all_ok;
        if (!all_ok) CHECK_MESSAGE(all_ok, "oracle mismatch at trial ", trial);
    }
    CHECK(crit.ok);

    // Table 4 spot check: P 0.99, R 0.86 => F1 0.92 at 2-decimal rounding
    ConfusionMatrix cm;
    cm.m[0][0] = 1640;
    cm.m[0][1] = 267; // row 0 sums to the published support 1907
    cm.m[1][0] = 17;  // column 0 sums to 1657
    cm.m[1][1] = 500;
    cm.m[2][2] = 400;
    cm.m[3][3] = 300;
    ClassificationReport rep = classification_report(cm, "spot");
    ACHECK(crit, std::round(rep.classes[0].precision * 100.0) / 100.0 == 0.99);
    ACHECK(crit, std::round(rep.classes[0].recall * 100.0) / 100.0 == 0.86);
    ACHECK(crit, std::round(rep.classes[0].f1 * 100.0) / 100.0 == 0.92);
    std::string text = render_report(rep);
    char want[128];
    std::snprintf(want, sizeof want, "%-12s %9.2f %9.2f %9.2f %9lld\n", "earthquake", 0.99, 0.86,
                  0.92, 1907ll);
    ACHECK(crit, text.find(want) != std::string::npos);
}

TEST_CASE("criterion 8: checkpoints round-trip and training is deterministic") {
    Criterion crit(8);
    TempDir tmp("acc8");

    // save -> load -> save again is bit-exact end to end
    BuiltModel model = build_baseline_cnn(16, 16, 3, 4, 5);
    AdamState adam = adam_init(model.weights);
    std::map<std::string, Tensor> grads;
    grads["c1/kernel"] = rand_tensor(model.weights.tensors.at("c1/kernel").shape, 50);
    adam_step(model.weights, grads, adam, 1e-3f);

    save_checkpoint(model.spec, model.weights, &adam, 7, 0.625f, tmp.file("a.bin"));
    Checkpoint ck = load_checkpoint(tmp.file("a.bin"));
    ACHECK(crit, ck.meta.epoch == 7);
    ACHECK(crit, ck.meta.val_accuracy == 0.625f);
    ACHECK(crit, serialize(ck.spec) == serialize(model.spec));
    ACHECK(crit, ck.weights.tensors.size() == model.weights.tensors.size());
    for (const auto& [name, t] : model.weights.tensors) {
        ACHECK(crit, ck.weights.tensors.at(name).shape == t.shape);
        ACHECK(crit, ck.weights.tensors.at(name).v == t.v);
    }
    REQUIRE(ck.optimizer.has_value());
    ACHECK(crit, ck.optimizer->t == adam.t);
    for (const auto& [name, t] : adam.m) ACHECK(crit, ck.optimizer->m.at(name).v == t.v);
    for (const auto& [name, t] : adam.v) ACHECK(crit, ck.optimizer->v.at(name).v == t.v);
    save_checkpoint(ck.spec, ck.weights, &*ck.optimizer, ck.meta.epoch, ck.meta.val_accuracy,
                    tmp.file("b.bin"));
    ACHECK(crit, slurp(tmp.file("a.bin")) == slurp(tmp.file("b.bin")));

    // two full CLI train runs with --threads 1: byte-identical artifacts
    REQUIRE(fs::exists(DSTK_CLI_PATH));
    write_synth_corpus((tmp.path / "raw").string(), 12, 32, 9);
    std::string cfg = std::string("{\n") + "  \"raw_root\": \"" + (tmp.path / "raw").string() +
                      "\",\n  \"image_size\": 32,\n" +
                      "  \"split\": {\"train_fraction\": 0.8, \"seed\": 3},\n" +
                      "  \"cnn\": {\"learning_rate\": 0.001, \"epochs\": 3, \"batch_size\": 16, "
                      "\"patience\": 5, \"seed\": 4}\n}\n";
    write_file_bytes(tmp.file("config.json"), cfg.data(), cfg.size());

    for (const char* out : {"outA", "outB"}) {
        std::string base = "--config " + tmp.file("config.json") + " --threads 1 --output-dir " +
                           (tmp.path / out).string();
        REQUIRE(run_cli(base + " clean") == 0);
        REQUIRE(run_cli(base + " split") == 0);
        REQUIRE(run_cli(base + " train --model cnn") == 0);
    }
    std::string ha = slurp(tmp.path / "outA" / "history_cnn.csv");
    ACHECK(crit, !ha.empty());
    ACHECK(crit, ha == slurp(tmp.path / "outB" / "history_cnn.csv"));
    std::string ca = slurp(tmp.path / "outA" / "checkpoint_cnn.bin");
    ACHECK(crit, !ca.empty());
    ACHECK(crit, ca == slurp(tmp.path / "outB" / "checkpoint_cnn.bin"));
}

TEST_CASE("criterion 9: grid search selects the dominant config and enumerates fully") {
    Criterion crit(9);

    // interaction table: depth-1 stumps cannot express it, and min_child_weight
    // 50 vetoes every split, so depth 3 with mcw 1 is the only combo that can
    // learn the mapping — it strictly dominates on every fold
    std::array<int, 16> table{};
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) table[(size_t)(a * 4 + b)] = (a == b) ? 0 : (a + b) % 4;
    std::vector<ArgmaxRecord> data = lookup_dataset(table, 6); // 96 rows

    GridSpec grid;
    grid.max_depth = {1, 3};
    grid.learning_rate = {0.3f};
    grid.min_child_weight = {1.0f, 50.0f};
    grid.subsample = {1.0f};
    GridSearchResult r = grid_search_cv(data, grid, 4, 40, 1.0f, 3);

    REQUIRE(r.table.size() == 4); // 2 * 1 * 2 * 1
    ACHECK(crit, r.best.max_depth == 3);
    ACHECK(crit, r.best.min_child_weight == 1.0f);
    const GridCell* winner = nullptr;
    for (const GridCell& cell : r.table)
        if (cell.config.max_depth == 3 && cell.config.min_child_weight == 1.0f) winner = &cell;
    REQUIRE(winner != nullptr);
    for (const GridCell& cell : r.table)
        if (&cell != winner) ACHECK(crit, winner->mean_accuracy > cell.mean_accuracy);
    ACHECK(crit, gbt_accuracy(r.model, data) == 1.0); // refit on all records

    // the table enumerates exactly the product of the candidate counts, in
    // nesting order max_depth -> learning_rate -> min_child_weight -> subsample
    GridSpec wide;
    wide.max_depth = {1, 2};
    wide.learning_rate = {0.1f, 0.3f};
    wide.min_child_weight = {1.0f};
    wide.subsample = {0.8f, 1.0f};
    Rng rng(51);
    std::vector<ArgmaxRecord> noise;
    for (int i = 0; i < 60; ++i)
        noise.push_back({(int)rng.below(4), (int)rng.below(4), (int)rng.below(4)});
    GridSearchResult w = grid_search_cv(noise, wide, 3, 5, 1.0f, 1);
    ACHECK(crit, w.table.size() == 8); // 2 * 2 * 1 * 2
    ACHECK(crit, w.table[0].config.max_depth == 1);
    ACHECK(crit, w.table[0].config.learning_rate == 0.1f);
    ACHECK(crit, w.table[0].config.subsample == 0.8f);
    ACHECK(crit, w.table[1].config.subsample == 1.0f);
    ACHECK(crit, w.table[2].config.learning_rate == 0.3f);
    ACHECK(crit, w.table[4].config.max_depth == 2);
}
