#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dstk/stacking.hpp"

namespace dstk {

struct GBTConfig {
    int max_depth = 4;
    float learning_rate = 0.1f;
    float min_child_weight = 1.0f;
    float subsample = 1.0f; // fraction of rows drawn per round, in (0,1]
    int n_rounds = 100;
    float lambda = 1.0f; // L2 leaf regularizer
    uint64_t seed = 0;
};

// Regression tree as a flat node list; nodes[0] is the root. Interior nodes
// route x[feature] < threshold to `left`, else `right`; leaves have
// feature = -1 and carry `value`.
struct GBTNode {
    int feature = -1;
    float threshold = 0.0f;
    int left = -1, right = -1;
    float value = 0.0f;
    bool is_leaf() const { return feature < 0; }
};

struct GBTTree {
    std::vector<GBTNode> nodes;
    float eval(const float* x) const;
};

// One regression tree per class per boosting round, trained against a
// multiclass softmax objective (g = p - y, h = p(1-p)).
struct GBTModel {
    GBTConfig config;
    int n_features = 2;
    std::array<float, 4> base_score{};
    std::vector<std::array<GBTTree, 4>> rounds;
};

// Features are the two argmax class codes treated as ordered integers.
GBTModel train_gbt(const std::vector<ArgmaxRecord>& records, const GBTConfig& config);

// Ablation path: the eight raw probabilities as features instead.
GBTModel train_gbt_probs(const std::vector<StackedRecord>& records, const GBTConfig& config);

struct GBTPrediction {
    std::array<float, 4> probs{};
    int label = 0;
};
GBTPrediction gbt_predict(const GBTModel& model, int pred1, int pred2);
GBTPrediction gbt_predict_features(const GBTModel& model, const float* x, int n_features);

double gbt_accuracy(const GBTModel& model, const std::vector<ArgmaxRecord>& records);

// Versioned binary model file, magic "GBTM", trees as preorder node lists.
void save_gbt(const GBTModel& model, const std::string& path);
GBTModel load_gbt(const std::string& path);

// Multiclass logistic regression over one-hot (pred1, pred2) indicators,
// fit by full-batch gradient descent from zero weights; no randomness.
struct LogRegModel {
    std::array<std::array<float, 8>, 4> w{};
    std::array<float, 4> b{};
};
LogRegModel train_logreg_baseline(const std::vector<ArgmaxRecord>& records, float lr,
                                  int iterations);
GBTPrediction logreg_predict(const LogRegModel& model, int pred1, int pred2);
double logreg_loss(const LogRegModel& model, const std::vector<ArgmaxRecord>& records);

// Candidate values per searched field; the enumeration nests in field order
// max_depth -> learning_rate -> min_child_weight -> subsample.
struct GridSpec {
    std::vector<int> max_depth{2, 4, 6};
    std::vector<float> learning_rate{0.01f, 0.1f, 0.3f};
    std::vector<float> min_child_weight{1.0f, 5.0f};
    std::vector<float> subsample{0.8f, 1.0f};
};

struct GridCell {
    GBTConfig config;
    double mean_accuracy = 0;
    double std_accuracy = 0; // population std over the k folds
};

struct GridSearchResult {
    GBTConfig best;
    std::vector<GridCell> table; // one row per grid combination
    GBTModel model;              // refit on all records with `best`
};

// Stratified k-fold CV over every grid combination; best = highest mean fold
// accuracy, ties broken by enumeration order. Each cell trains with seed
// mix64(seed, config_index, fold_index); the refit uses `seed` itself.
GridSearchResult grid_search_cv(const std::vector<ArgmaxRecord>& records, const GridSpec& grid,
                                int k_folds, int n_rounds = 100, float lambda = 1.0f,
                                uint64_t seed = 0);

std::string grid_to_csv(const std::vector<GridCell>& table);

} // namespace dstk
