#include "dstk/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dstk/errors.hpp"
#include "dstk/rng.hpp"

namespace dstk {

namespace {

void check_row(const float* p, size_t row, const char* which) {
    float sum = 0;
    for (int k = 0; k < 4; ++k) {
        if (p[k] < 0)
            throw DataError("stacked dataset: negative probability in " + std::string(which) +
                            " row " + std::to_string(row));
        sum += p[k];
    }
    if (std::fabs(sum - 1.0f) > 1e-5f)
        throw DataError("stacked dataset: " + std::string(which) + " row " + std::to_string(row) +
                        " sums to " + std::to_string(sum));
}

int code_from_letter(char c, size_t line) {
    switch (c) {
        case 'E': return 0;
        case 'F': return 1;
        case 'V': return 2;
        case 'W': return 3;
    }
    throw DataError("csv line " + std::to_string(line) + ": unknown class letter '" +
                    std::string(1, c) + "'");
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

float parse_float(const std::string& s, size_t line) {
    try {
        size_t pos = 0;
        float v = std::stof(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

int parse_class_field(const std::string& s, size_t line) {
    if (s.size() != 1) throw DataError("csv line " + std::to_string(line) + ": bad class '" + s + "'");
    return code_from_letter(s[0], line);
}

} // namespace

std::vector<StackedRecord> build_stacked_dataset(const Tensor& probs1, const Tensor& probs2,
                                                 const std::vector<int>& truths) {
    require_rank(probs1, 2, "stacked probs1");
    require_rank(probs2, 2, "stacked probs2");
    const int n = probs1.dim(0);
    if (probs1.dim(1) != 4 || probs2.dim(1) != 4)
        throw DimensionError("stacked dataset: probability rows must have 4 columns");
    if (probs2.dim(0) != n || (int)truths.size() != n)
        throw DimensionError("stacked dataset: " + std::to_string(n) + " vs " +
                             std::to_string(probs2.dim(0)) + " rows with " +
                             std::to_string(truths.size()) + " truths");
    std::vector<StackedRecord> out((size_t)n);
    for (size_t i = 0; i < (size_t)n; ++i) {
        const float* r1 = probs1.data() + i * 4;
        const float* r2 = probs2.data() + i * 4;
        check_row(r1, i, "model 1");
        check_row(r2, i, "model 2");
        if (truths[i] < 0 || truths[i] >= 4)
            throw DataError("stacked dataset: truth out of range at row " + std::to_string(i));
        std::copy_n(r1, 4, out[i].p1.begin());
        std::copy_n(r2, 4, out[i].p2.begin());
        out[i].truth = truths[i];
    }
    return out;
}

std::vector<StackedRecord> build_stacked_dataset(const BuiltModel& model1,
                                                 const BuiltModel& model2,
                                                 const DataSplit& eval_split) {
    if (eval_split.x.rank() == 4 && eval_split.x.dim(0) == 0) return {};
    EvalResult e1 = evaluate_split(model1, eval_split);
    EvalResult e2 = evaluate_split(model2, eval_split);
    return build_stacked_dataset(e1.probs, e2.probs, eval_split.y);
}

std::vector<ArgmaxRecord> argmax_labels(const std::vector<StackedRecord>& stacked) {
    std::vector<ArgmaxRecord> out(stacked.size());
    for (size_t i = 0; i < stacked.size(); ++i) {
        out[i].pred1 = argmax_row(stacked[i].p1.data(), 4);
        out[i].pred2 = argmax_row(stacked[i].p2.data(), 4);
        out[i].truth = stacked[i].truth;
    }
    return out;
}

std::string stacked_to_csv(const std::vector<StackedRecord>& records) {
    std::string out = "p1_E,p1_F,p1_V,p1_W,p2_E,p2_F,p2_V,p2_W,truth\n";
    char buf[32];
    for (const StackedRecord& r : records) {
        for (float v : r.p1) {
            std::snprintf(buf, sizeof(buf), "%.9g,", v);
            out += buf;
        }
        for (float v : r.p2) {
            std::snprintf(buf, sizeof(buf), "%.9g,", v);
            out += buf;
        }
        out += class_letter(class_from_code(r.truth));
        out += '\n';
    }
    return out;
}

std::vector<StackedRecord> parse_stacked_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{
            "p1_E", "p1_F", "p1_V", "p1_W", "p2_E", "p2_F", "p2_V", "p2_W", "truth"})
        throw DataError("stacked csv: missing or malformed header");
    std::vector<StackedRecord> out;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f = split_fields(line);
        if (f.size() != 9)
            throw DataError("csv line " + std::to_string(lineno) + ": expected 9 fields, got " +
                            std::to_string(f.size()));
        StackedRecord r;
        for (int k = 0; k < 4; ++k) r.p1[(size_t)k] = parse_float(f[(size_t)k], lineno);
        for (int k = 0; k < 4; ++k) r.p2[(size_t)k] = parse_float(f[(size_t)k + 4], lineno);
        r.truth = parse_class_field(f[8], lineno);
        check_row(r.p1.data(), lineno, "model 1");
        check_row(r.p2.data(), lineno, "model 2");
        out.push_back(r);
    }
    return out;
}

std::string argmax_to_csv(const std::vector<ArgmaxRecord>& records) {
    std::string out = "pred1,pred2,truth\n";
    for (const ArgmaxRecord& r : records) {
        out += class_letter(class_from_code(r.pred1));
        out += ',';
        out += class_letter(class_from_code(r.pred2));
        out += ',';
        out += class_letter(class_from_code(r.truth));
        out += '\n';
    }
    return out;
}

std::vector<ArgmaxRecord> parse_argmax_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) ||
        split_fields(line) != std::vector<std::string>{"pred1", "pred2", "truth"})
        throw DataError("argmax csv: missing or malformed header");
    std::vector<ArgmaxRecord> out;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f = split_fields(line);
        if (f.size() != 3)
            throw DataError("csv line " + std::to_string(lineno) + ": expected 3 fields, got " +
                            std::to_string(f.size()));
        out.push_back({parse_class_field(f[0], lineno), parse_class_field(f[1], lineno),
                       parse_class_field(f[2], lineno)});
    }
    return out;
}

MetaSplitIndices split_meta_indices(const std::vector<int>& truths, float train_fraction,
                                    uint64_t seed) {
    if (!(train_fraction > 0.0f && train_fraction < 1.0f))
        throw DataError("meta split: train fraction must be in (0,1)");
    std::vector<bool> to_train(truths.size(), false);
    for (int c = 0; c < 4; ++c) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < truths.size(); ++i)
            if (truths[i] == c) idx.push_back(i);
        Rng rng(mix64(seed, (uint64_t)c));
        rng.shuffle(idx);
        size_t n_train = (size_t)std::llround((double)train_fraction * (double)idx.size());
        for (size_t i = 0; i < n_train; ++i) to_train[idx[i]] = true;
    }
    MetaSplitIndices out;
    for (size_t i = 0; i < truths.size(); ++i)
        (to_train[i] ? out.train : out.test).push_back(i);
    return out;
}

MetaSplit split_meta(const std::vector<ArgmaxRecord>& records, float train_fraction,
                     uint64_t seed) {
    std::vector<int> truths(records.size());
    for (size_t i = 0; i < records.size(); ++i) truths[i] = records[i].truth;
    MetaSplitIndices idx = split_meta_indices(truths, train_fraction, seed);
    MetaSplit out;
    out.train.reserve(idx.train.size());
    out.test.reserve(idx.test.size());
    for (size_t i : idx.train) out.train.push_back(records[i]);
    for (size_t i : idx.test) out.test.push_back(records[i]);
    return out;
}

} // namespace dstk
