#pragma once

#include <array>
#include <string>
#include <vector>

#include "dstk/train.hpp"

namespace dstk {

// One evaluated image: the two base models' probability rows plus the truth.
// Column order inside each vector is the class-code order E,F,V,W.
struct StackedRecord {
    std::array<float, 4> p1{};
    std::array<float, 4> p2{};
    int truth = 0;
};

// The argmax view of a StackedRecord: two predicted class codes and a truth.
struct ArgmaxRecord {
    int pred1 = 0;
    int pred2 = 0;
    int truth = 0;
};

// Pairs two (N,4) probability tensors with truth labels; every probability
// row must be nonnegative and sum to 1 within 1e-5.
std::vector<StackedRecord> build_stacked_dataset(const Tensor& probs1, const Tensor& probs2,
                                                 const std::vector<int>& truths);

// Runs both base models over the split and stacks their probability rows.
std::vector<StackedRecord> build_stacked_dataset(const BuiltModel& model1,
                                                 const BuiltModel& model2,
                                                 const DataSplit& eval_split);

// Per-row argmax of each probability vector, ties toward the lowest code.
std::vector<ArgmaxRecord> argmax_labels(const std::vector<StackedRecord>& stacked);

// CSV exports/imports. Probabilities print with %.9g (exact float
// round-trip); class columns use the letters E/F/V/W.
std::string stacked_to_csv(const std::vector<StackedRecord>& records);
std::vector<StackedRecord> parse_stacked_csv(const std::string& text);
std::string argmax_to_csv(const std::vector<ArgmaxRecord>& records);
std::vector<ArgmaxRecord> parse_argmax_csv(const std::string& text);

// Deterministic stratified split of the stacked rows into meta-model
// train/test sets: per truth class, a seeded shuffle takes
// llround(fraction * n) rows for training; output keeps input order.
struct MetaSplit {
    std::vector<ArgmaxRecord> train, test;
};
MetaSplit split_meta(const std::vector<ArgmaxRecord>& records, float train_fraction,
                     uint64_t seed);

// The same partition as row indices into `truths`, ascending within each
// side, for callers that must keep rows joined to external data (paths).
struct MetaSplitIndices {
    std::vector<size_t> train, test;
};
MetaSplitIndices split_meta_indices(const std::vector<int>& truths, float train_fraction,
                                    uint64_t seed);

} // namespace dstk
