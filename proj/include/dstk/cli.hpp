#pragma once

#include <map>
#include <string>

#include "dstk/dataset.hpp"
#include "dstk/gbt.hpp"
#include "dstk/train.hpp"

namespace dstk {

struct StackingSettings {
    GridSpec grid;
    int k_folds = 5;
    int n_rounds = 100;
    float lambda = 1.0f;
    uint64_t seed = 0;
    float meta_fraction = 0.8f; // of the stacked rows, into meta-training
};

// Everything the subcommands share, loaded from one JSON document.
// Command-line flags override individual fields; --seed overrides every
// embedded seed at once.
struct PipelineConfig {
    std::string raw_root;
    std::string exclusion_list;                   // optional
    std::map<std::string, std::string> url_lists; // class name -> URL list file
    int image_size = 64;
    float train_fraction = 0.8f;
    uint64_t split_seed = 0;
    TrainConfig cnn;    // defaults follow the published run: 1e-3 / 30 / 64
    TrainConfig resnet; // 1e-4 / 50 / 16
    StackingSettings stacking;
    std::string output_dir;

    PipelineConfig();
};

PipelineConfig load_pipeline_config(const std::string& path);

// Split-assignment artifact (split.csv). Paths may contain commas; fields
// parse from the right.
void write_split_csv(const SplitAssignment& split, const std::string& path);
SplitAssignment read_split_csv(const std::string& path);

// Entry point behind main(): parses argv, dispatches the subcommand and maps
// exceptions to exit codes (0 ok, 1 usage, 2 data, 3 io).
int run_command(int argc, const char* const* argv);

} // namespace dstk
