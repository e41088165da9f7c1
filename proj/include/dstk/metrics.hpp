#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dstk/model.hpp"

namespace dstk {

// Per-class prediction counts, rows = truth, columns = prediction, class
// order earthquake/flood/volcano/wildfire.
struct ConfusionMatrix {
    std::array<std::array<int64_t, 4>, 4> m{};

    int64_t row_sum(int i) const;
    int64_t col_sum(int j) const;
    int64_t trace() const;
    int64_t total() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truths, const std::vector<int>& preds);

struct ClassMetrics {
    std::string label;
    double precision = 0, recall = 0, f1 = 0;
    int64_t support = 0;
    // zero-denominator cells report 0 but carry a flag into the export
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

struct ClassificationReport {
    std::string model;
    std::array<ClassMetrics, 4> classes;
    double accuracy = 0;
};

// Full-precision ratios from integer counts; rounding happens only when a
// report is rendered for people.
ClassificationReport classification_report(const ConfusionMatrix& cm, const std::string& model);

// Fixed-width text: class rows, metric columns, trailing accuracy row.
std::string render_report(const ClassificationReport& report);

// Plain 4x4 count table for terminal output.
std::string render_confusion(const ConfusionMatrix& cm);

// {model, classes:[{label, precision, recall, f1, support}], accuracy} with
// full float precision; parse-back reproduces the report exactly.
std::string report_to_json(const ClassificationReport& report);
ClassificationReport report_from_json(const std::string& text);

// Plot-ready CSV: one row per class, one F1 column per model, column order
// following the input order.
std::string compare_f1_csv(const std::vector<ClassificationReport>& reports);

} // namespace dstk
