#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dstk/augment.hpp"
#include "dstk/model.hpp"
#include "dstk/optimizer.hpp"

namespace dstk {

enum class Monitor { val_accuracy, val_loss };

struct TrainConfig {
    float learning_rate = 1e-3f;
    int epochs = 1;
    int batch_size = 32;
    int patience = 20;
    Monitor monitor = Monitor::val_accuracy;
    uint64_t seed = 0;
    AugmentConfig augmentation; // applied to training batches only
    std::string checkpoint_path;
    AdamConfig adam;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    float train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    int best_epoch = 0;
    int stopped_epoch = 0;
    int64_t total_steps = 0;
};

struct DataSplit {
    Tensor x; // (N,H,W,C)
    std::vector<int> y;
};

struct EvalResult {
    float loss = 0;
    float accuracy = 0;
    Tensor probs; // (N,classes)
};

// One pass over the training split: seeded shuffle, optional augmentation,
// tape forward/backward, one Adam step per batch. Returns (loss, accuracy)
// over the epoch and the number of gradient steps taken.
struct EpochStats {
    float loss = 0, accuracy = 0;
    int64_t steps = 0;
};
EpochStats run_epoch(BuiltModel& model, AdamState& adam, const DataSplit& train,
                     const TrainConfig& cfg, int epoch_index);

// Inference-mode loss/accuracy/probabilities, never augmented.
EvalResult evaluate_split(const BuiltModel& model, const DataSplit& split);

struct FitOptions {
    // Testing seam: when non-empty, entry [epoch-1] substitutes the monitored
    // value for that epoch while real training still runs underneath.
    std::vector<float> scripted_monitor;
};

struct FitResult {
    TrainHistory history;
};

// Full training loop with early stopping: strict improvement (> 1e-6)
// refreshes the best epoch and writes a checkpoint; training stops once
// (epoch - best_epoch) >= patience, and the best checkpoint is restored into
// the model before returning. Non-finite losses abort with an error naming
// the epoch.
FitResult fit(BuiltModel& model, const DataSplit& train, const DataSplit& val,
              const TrainConfig& cfg, const FitOptions& opts = {});

std::string history_to_csv(const TrainHistory& history);
void write_history_csv(const TrainHistory& history, const std::string& path);

// Argmax with ties resolved toward the lowest class code.
int argmax_row(const float* row, int k);

} // namespace dstk
