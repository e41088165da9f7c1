#include "dstk/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dstk/checkpoint.hpp"

namespace dstk {

namespace {

void check_split(const DataSplit& s, const char* what) {
    require_rank(s.x, 4, what);
    if ((int)s.y.size() != s.x.dim(0))
        throw DimensionError(std::string(what) + ": " + std::to_string(s.y.size()) +
                             " labels for " + std::to_string(s.x.dim(0)) + " images");
    if (s.x.dim(0) == 0) throw DataError(std::string(what) + ": empty split");
}

void check_config(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0)) throw DataError("train config: learning_rate must be > 0");
    if (cfg.epochs < 1) throw DataError("train config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (cfg.patience < 0) throw DataError("train config: patience must be >= 0");
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& order, int64_t lo, int64_t hi) {
    const int64_t row = x.numel() / x.dim(0);
    Tensor out({(int)(hi - lo), x.dim(1), x.dim(2), x.dim(3)});
    for (int64_t i = lo; i < hi; ++i)
        std::copy_n(x.data() + (size_t)order[(size_t)i] * row, row,
                    out.data() + (size_t)(i - lo) * row);
    return out;
}

} // namespace

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int i = 1; i < k; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

EpochStats run_epoch(BuiltModel& model, AdamState& adam, const DataSplit& train,
                     const TrainConfig& cfg, int epoch_index) {
    check_split(train, "train split");
    check_config(cfg);
    const int N = train.x.dim(0);
    const int K = model.spec.num_classes;

    std::vector<int> order((size_t)N);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix64(cfg.seed, (uint64_t)epoch_index, 0x5f));
    shuffle_rng.shuffle(order);
    Rng aug_rng(mix64(cfg.seed, (uint64_t)epoch_index, 0xa6));

    EpochStats stats;
    double loss_sum = 0;
    int64_t correct = 0;
    for (int64_t lo = 0; lo < N; lo += cfg.batch_size) {
        int64_t hi = std::min<int64_t>(lo + cfg.batch_size, N);
        Tensor bx = gather_rows(train.x, order, lo, hi);
        std::vector<int> by((size_t)(hi - lo));
        for (int64_t i = lo; i < hi; ++i) by[(size_t)(i - lo)] = train.y[(size_t)order[(size_t)i]];
        if (cfg.augmentation.enabled) bx = augment_batch(bx, cfg.augmentation, aug_rng);

        Tape tape;
        int input_id = tape.leaf(std::move(bx));
        std::map<std::string, int> param_ids;
        int logits_id = tape_forward_logits(tape, model.spec, model.weights, input_id, &param_ids);
        int loss_id = tape.sparse_ce_loss(logits_id, by);
        float batch_loss = tape.val(loss_id).v[0];
        tape.backward(loss_id);

        const Tensor& logits = tape.val(logits_id);
        for (int64_t i = 0; i < hi - lo; ++i)
            if (argmax_row(logits.data() + (size_t)i * K, K) == by[(size_t)i]) ++correct;
        loss_sum += (double)batch_loss * (double)(hi - lo);

        std::map<std::string, Tensor> grads;
        for (const auto& [name, id] : param_ids) grads.emplace(name, tape.grad(id));
        adam_step(model.weights, grads, adam, cfg.learning_rate);
        ++stats.steps;
    }
    stats.loss = (float)(loss_sum / N);
    stats.accuracy = (float)((double)correct / N);
    return stats;
}

EvalResult evaluate_split(const BuiltModel& model, const DataSplit& split) {
    check_split(split, "eval split");
    const int N = split.x.dim(0);
    const int K = model.spec.num_classes;
    const int64_t row = split.x.numel() / N;
    EvalResult out;
    out.probs = Tensor({N, K});
    double loss_sum = 0;
    int64_t correct = 0;
    constexpr int kChunk = 64;
    for (int64_t lo = 0; lo < N; lo += kChunk) {
        int64_t hi = std::min<int64_t>(lo + kChunk, N);
        Tensor bx({(int)(hi - lo), split.x.dim(1), split.x.dim(2), split.x.dim(3)});
        std::copy_n(split.x.data() + (size_t)lo * row, (hi - lo) * row, bx.data());
        std::vector<int> by(split.y.begin() + lo, split.y.begin() + hi);
        Tensor logits = infer_logits(model.spec, model.weights, bx);
        loss_sum += (double)sparse_ce_loss(logits, by) * (double)(hi - lo);
        Tensor probs = softmax(logits);
        std::copy_n(probs.data(), probs.numel(), out.probs.data() + (size_t)lo * K);
        for (int64_t i = 0; i < hi - lo; ++i)
            if (argmax_row(logits.data() + (size_t)i * K, K) == by[(size_t)i]) ++correct;
    }
    out.loss = (float)(loss_sum / N);
    out.accuracy = (float)((double)correct / N);
    return out;
}

FitResult fit(BuiltModel& model, const DataSplit& train, const DataSplit& val,
              const TrainConfig& cfg, const FitOptions& opts) {
    check_split(train, "train split");
    check_split(val, "val split");
    check_config(cfg);
    if (cfg.checkpoint_path.empty()) throw DataError("fit: checkpoint_path is required");
    if (!opts.scripted_monitor.empty() && (int)opts.scripted_monitor.size() < cfg.epochs)
        throw DataError("fit: scripted monitor shorter than epoch count");

    AdamState adam = adam_init(model.weights, cfg.adam);
    FitResult result;
    TrainHistory& hist = result.history;
    float best_value = 0;
    constexpr float kMinDelta = 1e-6f;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochStats tr = run_epoch(model, adam, train, cfg, epoch);
        EvalResult ev = evaluate_split(model, val);
        hist.total_steps += tr.steps;
        hist.records.push_back({epoch, tr.loss, tr.accuracy, ev.loss, ev.accuracy});
        if (!std::isfinite(tr.loss) || !std::isfinite(ev.loss))
            throw DataError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));

        float monitored = opts.scripted_monitor.empty()
                              ? (cfg.monitor == Monitor::val_accuracy ? ev.accuracy : ev.loss)
                              : opts.scripted_monitor[(size_t)(epoch - 1)];
        bool improved;
        if (hist.best_epoch == 0)
            improved = true;
        else if (cfg.monitor == Monitor::val_accuracy)
            improved = monitored > best_value + kMinDelta;
        else
            improved = monitored < best_value - kMinDelta;
        if (improved) {
            best_value = monitored;
            hist.best_epoch = epoch;
            save_checkpoint(model.spec, model.weights, &adam, (uint32_t)epoch, ev.accuracy,
                            cfg.checkpoint_path);
        }
        hist.stopped_epoch = epoch;
        if (epoch > hist.best_epoch && epoch - hist.best_epoch >= cfg.patience) break;
    }

    Checkpoint best = load_checkpoint(cfg.checkpoint_path);
    require_spec_match(best, model.spec);
    model.weights = std::move(best.weights);
    return result;
}

std::string history_to_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char buf[160];
    for (const EpochRecord& r : history.records) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                      r.train_acc, r.val_loss, r.val_acc);
        out += buf;
    }
    return out;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open history file for writing: " + path);
    f << history_to_csv(history);
    if (!f.flush()) throw IoError("history write failed: " + path);
}

} // namespace dstk
