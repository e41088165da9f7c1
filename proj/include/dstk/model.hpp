#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dstk/kernels.hpp"
#include "dstk/tape.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

// Class codes are alphabetical and stable across the whole pipeline.
enum class ClassLabel : int { earthquake = 0, flood = 1, volcano = 2, wildfire = 3 };
constexpr int kNumClasses = 4;

const char* to_string(ClassLabel c);
char class_letter(ClassLabel c); // E F V W
std::optional<ClassLabel> class_from_string(const std::string& s);
ClassLabel class_from_code(int code);

struct ConvLayer {
    std::string name;
    int kh = 3, kw = 3, in_ch = 0, out_ch = 0, stride = 1;
    Padding padding = Padding::same;
};
struct BatchNormLayer {
    std::string name;
    int channels = 0;
};
struct ReluLayer {};
struct MaxPoolLayer {
    int window = 2, stride = 2;
    Padding padding = Padding::valid;
};
// out = relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)); the shortcut is
// identity, or a 1x1 stride-matched projection conv when `projection` is set.
struct ResidualBlockLayer {
    std::string name;
    int in_ch = 0, filters = 0, stride = 1;
    bool projection = false;
};
struct GlobalAvgPoolLayer {};
struct FlattenLayer {};
struct DenseLayer {
    std::string name;
    int in_features = 0, units = 0;
};
struct SoftmaxLayer {};

using LayerDesc = std::variant<ConvLayer, BatchNormLayer, ReluLayer, MaxPoolLayer,
                               ResidualBlockLayer, GlobalAvgPoolLayer, FlattenLayer,
                               DenseLayer, SoftmaxLayer>;

struct ModelSpec {
    int input_h = 0, input_w = 0, input_c = 3;
    int num_classes = kNumClasses;
    std::vector<LayerDesc> layers;
};

// Canonical one-line-per-layer text form, stable across versions; the
// checkpoint spec hash is SHA-256 over exactly these bytes.
std::string serialize(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& text);
std::array<uint8_t, 32> spec_sha256(const ModelSpec& spec);

// Walks the layer list symbolically and throws DimensionError naming the
// first incompatible layer; returns the logits width on success.
int validate_spec(const ModelSpec& spec);

struct ModelWeights {
    // Parameters plus batch-norm running statistics, keyed by
    // "<layer>/<tensor>". std::map keeps iteration deterministic.
    std::map<std::string, Tensor> tensors;

    static bool is_running_stat(const std::string& name);
    std::vector<std::string> trainable_names() const;
    int64_t parameter_count() const; // trainable scalars
};

struct BuiltModel {
    ModelSpec spec;
    ModelWeights weights;
};

// conv->bn->relu->pool x3 (32/64/128 filters) -> dense 128 -> dense classes.
// Requires input height/width divisible by 8 for the pooling schedule.
BuiltModel build_baseline_cnn(int input_h, int input_w, int input_c, int num_classes,
                              uint64_t seed);
// 7x7/2 stem + 3x3/2 max pool, three stages of two residual blocks
// (64/128/256 filters, stride-2 projection entering stages 2 and 3),
// global average pooling, two 512-unit relu layers, classifier.
BuiltModel build_resnet(int input_h, int input_w, int input_c, int num_classes, uint64_t seed);

// Fills `weights` for `spec` with fan-in uniform init (limit sqrt(6/fan_in)),
// zero biases, unit gamma / zero beta, zero/unit running stats. Deterministic
// in `seed`.
ModelWeights init_weights(const ModelSpec& spec, uint64_t seed);

// Inference-mode forward pass (batch-norm uses running statistics) up to the
// logits, i.e. every layer except a trailing softmax.
Tensor infer_logits(const ModelSpec& spec, const ModelWeights& w, const Tensor& x);
Tensor predict_proba(const ModelSpec& spec, const ModelWeights& w, const Tensor& x);

// Training-mode forward to the logits on a tape. Registers every trainable
// parameter as a leaf and reports the ids so the caller can read gradients;
// batch-norm running stats inside `w` are updated as a side effect.
int tape_forward_logits(Tape& tape, const ModelSpec& spec, ModelWeights& w, int input_id,
                        std::map<std::string, int>* param_ids);

// Standalone residual block in inference mode (running statistics).
Tensor residual_block_forward(const Tensor& x, const ResidualBlockLayer& block,
                              const ModelWeights& w);

} // namespace dstk
