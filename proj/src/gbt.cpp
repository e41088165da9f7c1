#include "dstk/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "dstk/errors.hpp"
#include "dstk/rng.hpp"

namespace dstk {

namespace {

void check_config(const GBTConfig& cfg) {
    if (cfg.max_depth < 1) throw DataError("gbt config: max_depth must be >= 1");
    if (!(cfg.learning_rate > 0)) throw DataError("gbt config: learning_rate must be > 0");
    if (cfg.min_child_weight < 0) throw DataError("gbt config: min_child_weight must be >= 0");
    if (!(cfg.subsample > 0.0f && cfg.subsample <= 1.0f))
        throw DataError("gbt config: subsample must be in (0,1]");
    if (cfg.n_rounds < 1) throw DataError("gbt config: n_rounds must be >= 1");
    if (cfg.lambda < 0) throw DataError("gbt config: lambda must be >= 0");
}

// ceil(subsample * n), snapping away float noise so e.g. 0.8 of 10 rows is 8,
// not ceil(8.0000001) = 9.
int sample_count(float subsample, int n) {
    double v = (double)subsample * (double)n;
    double r = std::nearbyint(v);
    int k = std::fabs(v - r) <= 1e-6 * std::max(1.0, v) ? (int)r : (int)std::ceil(v);
    return std::clamp(k, 1, n);
}

void softmax4(const double* scores, double* p) {
    double mx = scores[0];
    for (int k = 1; k < 4; ++k) mx = std::max(mx, scores[k]);
    double sum = 0;
    for (int k = 0; k < 4; ++k) {
        p[k] = std::exp(scores[k] - mx);
        sum += p[k];
    }
    for (int k = 0; k < 4; ++k) p[k] /= sum;
}

int argmax4(const double* p) {
    int best = 0;
    for (int k = 1; k < 4; ++k)
        if (p[k] > p[best]) best = k;
    return best;
}

// Greedy exact tree construction over the sampled rows. Nodes are appended
// parent-first, left subtree before right, so the stored list is preorder.
struct TreeBuilder {
    const std::vector<float>& x; // row-major n x nfeat
    int nfeat;
    const std::vector<double>& g;
    const std::vector<double>& h;
    const GBTConfig& cfg;
    std::vector<GBTNode> nodes;

    int build(const std::vector<int>& rows, int depth) {
        double G = 0, H = 0;
        for (int r : rows) {
            G += g[(size_t)r];
            H += h[(size_t)r];
        }
        const int id = (int)nodes.size();
        nodes.push_back(GBTNode{});
        nodes[(size_t)id].value = (float)(-G / (H + (double)cfg.lambda) * (double)cfg.learning_rate);

        if (depth >= cfg.max_depth || rows.size() < 2) return id;

        // best split: highest positive gain, first encountered on ties
        // (lowest feature, lowest threshold)
        double best_gain = 0;
        int best_feat = -1;
        float best_thr = 0;
        const double parent_term = G * G / (H + (double)cfg.lambda);
        std::vector<std::pair<float, int>> order(rows.size());
        for (int f = 0; f < nfeat; ++f) {
            for (size_t i = 0; i < rows.size(); ++i)
                order[i] = {x[(size_t)rows[i] * (size_t)nfeat + (size_t)f], rows[i]};
            std::sort(order.begin(), order.end());
            double GL = 0, HL = 0;
            for (size_t i = 0; i + 1 < order.size(); ++i) {
                GL += g[(size_t)order[i].second];
                HL += h[(size_t)order[i].second];
                if (order[i].first == order[i + 1].first) continue; // not a boundary
                double HR = H - HL;
                if (HL < (double)cfg.min_child_weight || HR < (double)cfg.min_child_weight)
                    continue;
                double GR = G - GL;
                double gain = 0.5 * (GL * GL / (HL + (double)cfg.lambda) +
                                     GR * GR / (HR + (double)cfg.lambda) - parent_term);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = f;
                    best_thr = 0.5f * (order[i].first + order[i + 1].first);
                }
            }
        }
        if (best_feat < 0) return id;

        std::vector<int> left, right;
        for (int r : rows)
            (x[(size_t)r * (size_t)nfeat + (size_t)best_feat] < best_thr ? left : right)
                .push_back(r);
        nodes[(size_t)id].feature = best_feat;
        nodes[(size_t)id].threshold = best_thr;
        const int l = build(left, depth + 1);
        nodes[(size_t)id].left = l;
        const int r = build(right, depth + 1);
        nodes[(size_t)id].right = r;
        return id;
    }
};

GBTModel train_features(const std::vector<float>& x, int nfeat, const std::vector<int>& y,
                        const GBTConfig& cfg) {
    check_config(cfg);
    const int n = (int)y.size();
    if (n == 0) throw DataError("gbt: empty dataset");
    for (int label : y)
        if (label < 0 || label >= 4) throw DataError("gbt: label out of range");

    GBTModel model;
    model.config = cfg;
    model.n_features = nfeat;

    std::vector<double> scores((size_t)n * 4, 0.0);
    std::vector<double> g((size_t)n), h((size_t)n);
    std::vector<double> p((size_t)n * 4);
    std::vector<int> all_rows((size_t)n);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    const int k = sample_count(cfg.subsample, n);

    for (int round = 0; round < cfg.n_rounds; ++round) {
        for (int i = 0; i < n; ++i) softmax4(&scores[(size_t)i * 4], &p[(size_t)i * 4]);

        std::vector<int> rows = all_rows;
        if (k < n) {
            Rng rng(mix64(cfg.seed, (uint64_t)round, 0x9b));
            rng.shuffle(rows);
            rows.resize((size_t)k);
        }

        std::array<GBTTree, 4> trees;
        for (int c = 0; c < 4; ++c) {
            for (int i = 0; i < n; ++i) {
                double pc = p[(size_t)i * 4 + (size_t)c];
                g[(size_t)i] = pc - (y[(size_t)i] == c ? 1.0 : 0.0);
                h[(size_t)i] = pc * (1.0 - pc);
            }
            TreeBuilder b{x, nfeat, g, h, cfg, {}};
            b.build(rows, 0);
            trees[(size_t)c].nodes = std::move(b.nodes);
        }
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 4; ++c)
                scores[(size_t)i * 4 + (size_t)c] +=
                    (double)trees[(size_t)c].eval(&x[(size_t)i * (size_t)nfeat]);
        model.rounds.push_back(std::move(trees));
    }
    return model;
}

std::vector<float> code_features(const std::vector<ArgmaxRecord>& records) {
    std::vector<float> x;
    x.reserve(records.size() * 2);
    for (const ArgmaxRecord& r : records) {
        if (r.pred1 < 0 || r.pred1 >= 4 || r.pred2 < 0 || r.pred2 >= 4)
            throw DataError("gbt: prediction code out of range");
        x.push_back((float)r.pred1);
        x.push_back((float)r.pred2);
    }
    return x;
}

} // namespace

float GBTTree::eval(const float* x) const {
    if (nodes.empty()) return 0.0f;
    int id = 0;
    while (!nodes[(size_t)id].is_leaf())
        id = x[(size_t)nodes[(size_t)id].feature] < nodes[(size_t)id].threshold
                 ? nodes[(size_t)id].left
                 : nodes[(size_t)id].right;
    return nodes[(size_t)id].value;
}

GBTModel train_gbt(const std::vector<ArgmaxRecord>& records, const GBTConfig& config) {
    std::vector<float> x = code_features(records);
    std::vector<int> y(records.size());
    for (size_t i = 0; i < records.size(); ++i) y[i] = records[i].truth;
    return train_features(x, 2, y, config);
}

GBTModel train_gbt_probs(const std::vector<StackedRecord>& records, const GBTConfig& config) {
    std::vector<float> x;
    x.reserve(records.size() * 8);
    std::vector<int> y(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        for (float v : records[i].p1) x.push_back(v);
        for (float v : records[i].p2) x.push_back(v);
        y[i] = records[i].truth;
    }
    return train_features(x, 8, y, config);
}

GBTPrediction gbt_predict_features(const GBTModel& model, const float* x, int n_features) {
    if (n_features != model.n_features)
        throw DimensionError("gbt predict: " + std::to_string(n_features) + " features for a " +
                             std::to_string(model.n_features) + "-feature model");
    double scores[4];
    for (int c = 0; c < 4; ++c) scores[c] = (double)model.base_score[(size_t)c];
    for (const auto& round : model.rounds)
        for (int c = 0; c < 4; ++c) scores[c] += (double)round[(size_t)c].eval(x);
    double p[4];
    softmax4(scores, p);
    GBTPrediction out;
    for (int c = 0; c < 4; ++c) out.probs[(size_t)c] = (float)p[c];
    out.label = argmax4(p);
    return out;
}

GBTPrediction gbt_predict(const GBTModel& model, int pred1, int pred2) {
    if (pred1 < 0 || pred1 >= 4 || pred2 < 0 || pred2 >= 4)
        throw DataError("gbt predict: prediction code out of range");
    float x[2] = {(float)pred1, (float)pred2};
    return gbt_predict_features(model, x, 2);
}

double gbt_accuracy(const GBTModel& model, const std::vector<ArgmaxRecord>& records) {
    if (records.empty()) throw DataError("gbt accuracy: empty dataset");
    int64_t hits = 0;
    for (const ArgmaxRecord& r : records)
        if (gbt_predict(model, r.pred1, r.pred2).label == r.truth) ++hits;
    return (double)hits / (double)records.size();
}

namespace {

constexpr char kMagic[4] = {'G', 'B', 'T', 'M'};
constexpr uint16_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append((const char*)p, n);
}
template <class T>
void put(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("corrupt gbt model: truncated file");
    }
    void read_bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <class T>
    T read() {
        T v;
        read_bytes(&v, sizeof(T));
        return v;
    }
};

void put_tree(std::string& out, const GBTTree& t) {
    put(out, (uint32_t)t.nodes.size());
    for (const GBTNode& n : t.nodes) {
        put(out, (int32_t)n.feature);
        put(out, n.threshold);
        put(out, (int32_t)n.left);
        put(out, (int32_t)n.right);
        put(out, n.value);
    }
}

GBTTree read_tree(Cursor& c, int n_features) {
    uint32_t count = c.read<uint32_t>();
    if (count > (1u << 24)) throw DataError("corrupt gbt model: implausible tree size");
    GBTTree t;
    t.nodes.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        GBTNode& n = t.nodes[i];
        n.feature = (int)c.read<int32_t>();
        n.threshold = c.read<float>();
        n.left = (int)c.read<int32_t>();
        n.right = (int)c.read<int32_t>();
        n.value = c.read<float>();
        if (!std::isfinite(n.value)) throw DataError("corrupt gbt model: non-finite leaf");
        // children sit strictly after their parent in the preorder list, which
        // also rules out cycles when walking
        if (n.feature < -1 || n.feature >= n_features ||
            (n.feature >= 0 && (n.left <= (int)i || n.left >= (int)count || n.right <= (int)i ||
                                n.right >= (int)count)))
            throw DataError("corrupt gbt model: bad node wiring");
    }
    return t;
}

} // namespace

void save_gbt(const GBTModel& model, const std::string& path) {
    std::string out;
    put_bytes(out, kMagic, 4);
    put(out, kVersion);
    put(out, (uint32_t)model.n_features);
    for (float b : model.base_score) put(out, b);
    put(out, (int32_t)model.config.max_depth);
    put(out, model.config.learning_rate);
    put(out, model.config.min_child_weight);
    put(out, model.config.subsample);
    put(out, (int32_t)model.config.n_rounds);
    put(out, model.config.lambda);
    put(out, (uint64_t)model.config.seed);
    put(out, (uint32_t)model.rounds.size());
    for (const auto& round : model.rounds)
        for (const GBTTree& t : round) put_tree(out, t);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open gbt model file for writing: " + path);
    f.write(out.data(), (std::streamsize)out.size());
    f.flush();
    if (!f) throw IoError("gbt model write failed: " + path);
}

GBTModel load_gbt(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open gbt model file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Cursor c{buf};
    char magic[4];
    c.read_bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a gbt model: " + path);
    uint16_t version = c.read<uint16_t>();
    if (version != kVersion)
        throw DataError("unsupported gbt model version " + std::to_string(version));

    GBTModel model;
    model.n_features = (int)c.read<uint32_t>();
    if (model.n_features < 1 || model.n_features > 64)
        throw DataError("corrupt gbt model: implausible feature count");
    for (float& b : model.base_score) b = c.read<float>();
    model.config.max_depth = (int)c.read<int32_t>();
    model.config.learning_rate = c.read<float>();
    model.config.min_child_weight = c.read<float>();
    model.config.subsample = c.read<float>();
    model.config.n_rounds = (int)c.read<int32_t>();
    model.config.lambda = c.read<float>();
    model.config.seed = c.read<uint64_t>();
    uint32_t rounds = c.read<uint32_t>();
    if (rounds > (1u << 20)) throw DataError("corrupt gbt model: implausible round count");
    model.rounds.resize(rounds);
    for (auto& round : model.rounds)
        for (GBTTree& t : round) t = read_tree(c, model.n_features);
    if (c.pos != buf.size()) throw DataError("corrupt gbt model: trailing bytes");
    return model;
}

LogRegModel train_logreg_baseline(const std::vector<ArgmaxRecord>& records, float lr,
                                  int iterations) {
    if (records.empty()) throw DataError("logreg: empty dataset");
    if (!(lr > 0)) throw DataError("logreg: learning rate must be > 0");
    if (iterations < 0) throw DataError("logreg: iterations must be >= 0");
    for (const ArgmaxRecord& r : records)
        if (r.pred1 < 0 || r.pred1 >= 4 || r.pred2 < 0 || r.pred2 >= 4 || r.truth < 0 ||
            r.truth >= 4)
            throw DataError("logreg: class code out of range");

    LogRegModel model;
    const double n = (double)records.size();
    for (int it = 0; it < iterations; ++it) {
        double gw[4][8] = {};
        double gb[4] = {};
        for (const ArgmaxRecord& r : records) {
            const int f1 = r.pred1, f2 = 4 + r.pred2;
            double scores[4];
            for (int c = 0; c < 4; ++c)
                scores[c] = (double)model.w[(size_t)c][(size_t)f1] +
                            (double)model.w[(size_t)c][(size_t)f2] + (double)model.b[(size_t)c];
            double p[4];
            softmax4(scores, p);
            for (int c = 0; c < 4; ++c) {
                double d = p[c] - (r.truth == c ? 1.0 : 0.0);
                gw[c][f1] += d;
                gw[c][f2] += d;
                gb[c] += d;
            }
        }
        for (int c = 0; c < 4; ++c) {
            for (int f = 0; f < 8; ++f)
                model.w[(size_t)c][(size_t)f] -= (float)((double)lr * gw[c][f] / n);
            model.b[(size_t)c] -= (float)((double)lr * gb[c] / n);
        }
    }
    return model;
}

GBTPrediction logreg_predict(const LogRegModel& model, int pred1, int pred2) {
    if (pred1 < 0 || pred1 >= 4 || pred2 < 0 || pred2 >= 4)
        throw DataError("logreg predict: prediction code out of range");
    double scores[4];
    for (int c = 0; c < 4; ++c)
        scores[c] = (double)model.w[(size_t)c][(size_t)pred1] +
                    (double)model.w[(size_t)c][(size_t)(4 + pred2)] + (double)model.b[(size_t)c];
    double p[4];
    softmax4(scores, p);
    GBTPrediction out;
    for (int c = 0; c < 4; ++c) out.probs[(size_t)c] = (float)p[c];
    out.label = argmax4(p);
    return out;
}

double logreg_loss(const LogRegModel& model, const std::vector<ArgmaxRecord>& records) {
    if (records.empty()) throw DataError("logreg loss: empty dataset");
    double sum = 0;
    for (const ArgmaxRecord& r : records) {
        GBTPrediction p = logreg_predict(model, r.pred1, r.pred2);
        sum -= std::log(std::max((double)p.probs[(size_t)r.truth], 1e-300));
    }
    return sum / (double)records.size();
}

GridSearchResult grid_search_cv(const std::vector<ArgmaxRecord>& records, const GridSpec& grid,
                                int k_folds, int n_rounds, float lambda, uint64_t seed) {
    if (grid.max_depth.empty() || grid.learning_rate.empty() || grid.min_child_weight.empty() ||
        grid.subsample.empty())
        throw DataError("grid search: empty grid");
    if (k_folds < 2) throw DataError("grid search: k_folds must be >= 2");
    if ((int)records.size() < k_folds)
        throw DataError("grid search: " + std::to_string(records.size()) + " records for " +
                        std::to_string(k_folds) + " folds");

    // stratified fold assignment: per class, seeded shuffle then round-robin
    std::vector<int> fold_of(records.size());
    for (int c = 0; c < 4; ++c) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < records.size(); ++i)
            if (records[i].truth == c) idx.push_back(i);
        Rng rng(mix64(seed, (uint64_t)c));
        rng.shuffle(idx);
        for (size_t i = 0; i < idx.size(); ++i) fold_of[idx[i]] = (int)(i % (size_t)k_folds);
    }

    GridSearchResult result;
    double best_mean = -1;
    uint64_t config_index = 0;
    for (int md : grid.max_depth)
        for (float lr : grid.learning_rate)
            for (float mcw : grid.min_child_weight)
                for (float ss : grid.subsample) {
                    GridCell cell;
                    cell.config = GBTConfig{md, lr, mcw, ss, n_rounds, lambda, seed};
                    std::vector<double> accs;
                    for (int f = 0; f < k_folds; ++f) {
                        std::vector<ArgmaxRecord> train, test;
                        for (size_t i = 0; i < records.size(); ++i)
                            (fold_of[i] == f ? test : train).push_back(records[i]);
                        if (test.empty() || train.empty()) continue;
                        GBTConfig cfg = cell.config;
                        cfg.seed = mix64(seed, config_index, (uint64_t)f);
                        GBTModel m = train_gbt(train, cfg);
                        accs.push_back(gbt_accuracy(m, test));
                    }
                    if (accs.empty()) throw DataError("grid search: no usable folds");
                    double mean = 0;
                    for (double a : accs) mean += a;
                    mean /= (double)accs.size();
                    double var = 0;
                    for (double a : accs) var += (a - mean) * (a - mean);
                    cell.mean_accuracy = mean;
                    cell.std_accuracy = std::sqrt(var / (double)accs.size());
                    if (mean > best_mean) {
                        best_mean = mean;
                        result.best = cell.config;
                    }
                    result.table.push_back(cell);
                    ++config_index;
                }

    result.model = train_gbt(records, result.best);
    return result;
}

std::string grid_to_csv(const std::vector<GridCell>& table) {
    std::string out =
        "max_depth,learning_rate,min_child_weight,subsample,n_rounds,lambda,"
        "mean_accuracy,std_accuracy\n";
    char buf[160];
    for (const GridCell& c : table) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%d,%.9g,%.9g,%.9g\n",
                      c.config.max_depth, c.config.learning_rate, c.config.min_child_weight,
                      c.config.subsample, c.config.n_rounds, c.config.lambda, c.mean_accuracy,
                      c.std_accuracy);
        out += buf;
    }
    return out;
}

} // namespace dstk
