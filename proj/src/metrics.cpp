#include "dstk/metrics.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "dstk/errors.hpp"

namespace dstk {

int64_t ConfusionMatrix::row_sum(int i) const {
    int64_t s = 0;
    for (int j = 0; j < 4; ++j) s += m[(size_t)i][(size_t)j];
    return s;
}

int64_t ConfusionMatrix::col_sum(int j) const {
    int64_t s = 0;
    for (int i = 0; i < 4; ++i) s += m[(size_t)i][(size_t)j];
    return s;
}

int64_t ConfusionMatrix::trace() const {
    int64_t s = 0;
    for (int i = 0; i < 4; ++i) s += m[(size_t)i][(size_t)i];
    return s;
}

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (int i = 0; i < 4; ++i) s += row_sum(i);
    return s;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truths, const std::vector<int>& preds) {
    if (truths.size() != preds.size())
        throw DataError("confusion_matrix: " + std::to_string(truths.size()) + " truths vs " +
                        std::to_string(preds.size()) + " predictions");
    if (truths.empty()) throw DataError("confusion_matrix: no samples");
    ConfusionMatrix cm;
    for (size_t i = 0; i < truths.size(); ++i) {
        int t = truths[i], p = preds[i];
        if (t < 0 || t >= 4 || p < 0 || p >= 4)
            throw DataError("confusion_matrix: label out of range at sample " + std::to_string(i));
        ++cm.m[(size_t)t][(size_t)p];
    }
    return cm;
}

ClassificationReport classification_report(const ConfusionMatrix& cm, const std::string& model) {
    const int64_t total = cm.total();
    if (total <= 0) throw DataError("classification_report: empty confusion matrix");
    ClassificationReport r;
    r.model = model;
    for (int j = 0; j < 4; ++j) {
        ClassMetrics& c = r.classes[(size_t)j];
        c.label = to_string(class_from_code(j));
        c.support = cm.row_sum(j);
        const int64_t col = cm.col_sum(j);
        const int64_t diag = cm.m[(size_t)j][(size_t)j];
        if (col > 0)
            c.precision = (double)diag / (double)col;
        else
            c.precision_undefined = true;
        if (c.support > 0)
            c.recall = (double)diag / (double)c.support;
        else
            c.recall_undefined = true;
        if (c.precision + c.recall > 0)
            c.f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
        else
            c.f1_undefined = true; // the F1 denominator itself is zero
    }
    r.accuracy = (double)cm.trace() / (double)total;
    return r;
}

std::string render_report(const ClassificationReport& report) {
    char buf[128];
    std::string out = "Model: " + report.model + "\n";
    std::snprintf(buf, sizeof(buf), "%-12s %9s %9s %9s %9s\n", "Class", "Precision", "Recall",
                  "F1 Score", "Support");
    out += buf;
    for (const ClassMetrics& c : report.classes) {
        std::snprintf(buf, sizeof(buf), "%-12s %9.2f %9.2f %9.2f %9lld\n", c.label.c_str(),
                      c.precision, c.recall, c.f1, (long long)c.support);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-12s %39.2f\n", "Accuracy", report.accuracy);
    out += buf;
    return out;
}

std::string render_confusion(const ConfusionMatrix& cm) {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-12s", "truth\\pred");
    out += buf;
    for (int j = 0; j < 4; ++j) {
        std::snprintf(buf, sizeof(buf), " %10s", to_string(class_from_code(j)));
        out += buf;
    }
    out += "\n";
    for (int i = 0; i < 4; ++i) {
        std::snprintf(buf, sizeof(buf), "%-12s", to_string(class_from_code(i)));
        out += buf;
        for (int j = 0; j < 4; ++j) {
            std::snprintf(buf, sizeof(buf), " %10lld", (long long)cm.m[(size_t)i][(size_t)j]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::string report_to_json(const ClassificationReport& report) {
    nlohmann::ordered_json doc;
    doc["model"] = report.model;
    doc["classes"] = nlohmann::ordered_json::array();
    for (const ClassMetrics& c : report.classes) {
        nlohmann::ordered_json e;
        e["label"] = c.label;
        e["precision"] = c.precision;
        e["recall"] = c.recall;
        e["f1"] = c.f1;
        e["support"] = c.support;
        std::vector<std::string> undefined;
        if (c.precision_undefined) undefined.push_back("precision");
        if (c.recall_undefined) undefined.push_back("recall");
        if (c.f1_undefined) undefined.push_back("f1");
        if (!undefined.empty()) e["undefined"] = undefined;
        doc["classes"].push_back(std::move(e));
    }
    doc["accuracy"] = report.accuracy;
    return doc.dump(2) + "\n";
}

ClassificationReport report_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report parse: ") + e.what());
    }
    try {
        ClassificationReport r;
        r.model = doc.at("model").get<std::string>();
        const auto& classes = doc.at("classes");
        if (classes.size() != 4)
            throw DataError("report parse: expected 4 classes, got " +
                            std::to_string(classes.size()));
        for (size_t j = 0; j < 4; ++j) {
            const auto& e = classes[j];
            ClassMetrics& c = r.classes[j];
            c.label = e.at("label").get<std::string>();
            c.precision = e.at("precision").get<double>();
            c.recall = e.at("recall").get<double>();
            c.f1 = e.at("f1").get<double>();
            c.support = e.at("support").get<int64_t>();
            if (e.contains("undefined"))
                for (const auto& name : e.at("undefined")) {
                    std::string s = name.get<std::string>();
                    if (s == "precision") c.precision_undefined = true;
                    if (s == "recall") c.recall_undefined = true;
                    if (s == "f1") c.f1_undefined = true;
                }
        }
        r.accuracy = doc.at("accuracy").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report parse: ") + e.what());
    }
}

std::string compare_f1_csv(const std::vector<ClassificationReport>& reports) {
    if (reports.empty()) throw DataError("compare_f1: no reports");
    std::string out = "class";
    for (const ClassificationReport& r : reports) out += "," + r.model;
    out += "\n";
    char buf[64];
    for (int j = 0; j < 4; ++j) {
        out += to_string(class_from_code(j));
        for (const ClassificationReport& r : reports) {
            std::snprintf(buf, sizeof(buf), ",%.9g", r.classes[(size_t)j].f1);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace dstk
