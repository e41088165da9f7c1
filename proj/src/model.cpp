#include "dstk/model.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <sstream>

#include "dstk/rng.hpp"

namespace dstk {

const char* to_string(ClassLabel c) {
    switch (c) {
        case ClassLabel::earthquake: return "earthquake";
        case ClassLabel::flood: return "flood";
        case ClassLabel::volcano: return "volcano";
        case ClassLabel::wildfire: return "wildfire";
    }
    throw DataError("invalid class code " + std::to_string((int)c));
}

char class_letter(ClassLabel c) {
    static const char letters[] = {'E', 'F', 'V', 'W'};
    return letters[(int)c];
}

std::optional<ClassLabel> class_from_string(const std::string& s) {
    for (int i = 0; i < kNumClasses; ++i)
        if (s == to_string((ClassLabel)i)) return (ClassLabel)i;
    return std::nullopt;
}

ClassLabel class_from_code(int code) {
    if (code < 0 || code >= kNumClasses)
        throw DataError("class code " + std::to_string(code) + " outside [0,4)");
    return (ClassLabel)code;
}

namespace {

const char* pad_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding pad_from(const std::string& s) {
    if (s == "same") return Padding::same;
    if (s == "valid") return Padding::valid;
    throw DataError("model spec: unknown padding '" + s + "'");
}

void check_name(const std::string& name) {
    if (name.empty()) throw DataError("model spec: empty layer name");
    for (char ch : name)
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '/')
            throw DataError("model spec: layer name '" + name + "' contains reserved characters");
}

} // namespace

std::string serialize(const ModelSpec& spec) {
    std::ostringstream out;
    out << "dstk-model v1\n";
    out << "input " << spec.input_h << " " << spec.input_w << " " << spec.input_c << "\n";
    out << "classes " << spec.num_classes << "\n";
    for (const LayerDesc& layer : spec.layers) {
        if (auto* l = std::get_if<ConvLayer>(&layer)) {
            check_name(l->name);
            out << "conv " << l->name << " " << l->kh << " " << l->kw << " " << l->in_ch << " "
                << l->out_ch << " " << l->stride << " " << pad_name(l->padding) << "\n";
        } else if (auto* l = std::get_if<BatchNormLayer>(&layer)) {
            check_name(l->name);
            out << "batch_norm " << l->name << " " << l->channels << "\n";
        } else if (std::get_if<ReluLayer>(&layer)) {
            out << "relu\n";
        } else if (auto* l = std::get_if<MaxPoolLayer>(&layer)) {
            out << "max_pool " << l->window << " " << l->stride << " " << pad_name(l->padding)
                << "\n";
        } else if (auto* l = std::get_if<ResidualBlockLayer>(&layer)) {
            check_name(l->name);
            out << "residual " << l->name << " " << l->in_ch << " " << l->filters << " "
                << l->stride << " " << (l->projection ? 1 : 0) << "\n";
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            out << "global_avg_pool\n";
        } else if (std::get_if<FlattenLayer>(&layer)) {
            out << "flatten\n";
        } else if (auto* l = std::get_if<DenseLayer>(&layer)) {
            check_name(l->name);
            out << "dense " << l->name << " " << l->in_features << " " << l->units << "\n";
        } else if (std::get_if<SoftmaxLayer>(&layer)) {
            out << "softmax\n";
        }
    }
    return out.str();
}

ModelSpec parse_model_spec(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "dstk-model v1")
        throw DataError("model spec: missing 'dstk-model v1' header");
    ModelSpec spec;
    auto fields = [](const std::string& s) {
        std::istringstream ls(s);
        std::vector<std::string> out;
        std::string tok;
        while (ls >> tok) out.push_back(tok);
        return out;
    };
    auto to_int = [](const std::string& s) {
        try {
            size_t pos = 0;
            int v = std::stoi(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw DataError("model spec: expected integer, got '" + s + "'");
        }
    };
    bool have_input = false, have_classes = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = fields(line);
        const std::string& kind = f[0];
        if (kind == "input" && f.size() == 4) {
            spec.input_h = to_int(f[1]);
            spec.input_w = to_int(f[2]);
            spec.input_c = to_int(f[3]);
            have_input = true;
        } else if (kind == "classes" && f.size() == 2) {
            spec.num_classes = to_int(f[1]);
            have_classes = true;
        } else if (kind == "conv" && f.size() == 8) {
            spec.layers.push_back(ConvLayer{f[1], to_int(f[2]), to_int(f[3]), to_int(f[4]),
                                            to_int(f[5]), to_int(f[6]), pad_from(f[7])});
        } else if (kind == "batch_norm" && f.size() == 3) {
            spec.layers.push_back(BatchNormLayer{f[1], to_int(f[2])});
        } else if (kind == "relu" && f.size() == 1) {
            spec.layers.push_back(ReluLayer{});
        } else if (kind == "max_pool" && f.size() == 4) {
            spec.layers.push_back(MaxPoolLayer{to_int(f[1]), to_int(f[2]), pad_from(f[3])});
        } else if (kind == "residual" && f.size() == 6) {
            spec.layers.push_back(ResidualBlockLayer{f[1], to_int(f[2]), to_int(f[3]),
                                                     to_int(f[4]), to_int(f[5]) != 0});
        } else if (kind == "global_avg_pool" && f.size() == 1) {
            spec.layers.push_back(GlobalAvgPoolLayer{});
        } else if (kind == "flatten" && f.size() == 1) {
            spec.layers.push_back(FlattenLayer{});
        } else if (kind == "dense" && f.size() == 4) {
            spec.layers.push_back(DenseLayer{f[1], to_int(f[2]), to_int(f[3])});
        } else if (kind == "softmax" && f.size() == 1) {
            spec.layers.push_back(SoftmaxLayer{});
        } else {
            throw DataError("model spec: cannot parse line '" + line + "'");
        }
    }
    if (!have_input || !have_classes)
        throw DataError("model spec: missing input/classes declarations");
    return spec;
}

std::array<uint8_t, 32> spec_sha256(const ModelSpec& spec) {
    std::string text = serialize(spec);
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    if (!EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) ||
        len != 32)
        throw DataError("sha256 computation failed");
    return out;
}

namespace {

struct ShapeState {
    bool spatial = true; // rank-4 (N,h,w,c) vs rank-2 (N,f)
    int h = 0, w = 0, c = 0;
    int f = 0;
};

[[noreturn]] void bad_layer(size_t index, const std::string& what) {
    throw DimensionError("model spec: layer " + std::to_string(index) + ": " + what);
}

} // namespace

int validate_spec(const ModelSpec& spec) {
    if (spec.input_h < 1 || spec.input_w < 1 || spec.input_c < 1)
        throw DimensionError("model spec: input shape must be positive");
    if (spec.num_classes < 2) throw DataError("model spec: need at least 2 classes");
    ShapeState s{true, spec.input_h, spec.input_w, spec.input_c, 0};
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& layer = spec.layers[i];
        bool last = i + 1 == spec.layers.size();
        if (auto* l = std::get_if<ConvLayer>(&layer)) {
            if (!s.spatial) bad_layer(i, "conv applied to flattened input");
            if (l->in_ch != s.c)
                bad_layer(i, "conv '" + l->name + "' expects " + std::to_string(l->in_ch) +
                                 " channels, input has " + std::to_string(s.c));
            s.h = conv_out_dim(s.h, l->kh, l->stride, l->padding);
            s.w = conv_out_dim(s.w, l->kw, l->stride, l->padding);
            s.c = l->out_ch;
        } else if (auto* l = std::get_if<BatchNormLayer>(&layer)) {
            int ch = s.spatial ? s.c : s.f;
            if (l->channels != ch)
                bad_layer(i, "batch_norm '" + l->name + "' expects " +
                                 std::to_string(l->channels) + " channels, input has " +
                                 std::to_string(ch));
        } else if (std::get_if<ReluLayer>(&layer)) {
            // shape preserved
        } else if (auto* l = std::get_if<MaxPoolLayer>(&layer)) {
            if (!s.spatial) bad_layer(i, "max_pool applied to flattened input");
            s.h = conv_out_dim(s.h, l->window, l->stride, l->padding);
            s.w = conv_out_dim(s.w, l->window, l->stride, l->padding);
        } else if (auto* l = std::get_if<ResidualBlockLayer>(&layer)) {
            if (!s.spatial) bad_layer(i, "residual block applied to flattened input");
            if (l->in_ch != s.c)
                bad_layer(i, "residual '" + l->name + "' expects " + std::to_string(l->in_ch) +
                                 " channels, input has " + std::to_string(s.c));
            if ((l->stride != 1 || l->filters != l->in_ch) && !l->projection)
                bad_layer(i, "residual '" + l->name +
                                 "' changes shape but has no projection shortcut");
            s.h = conv_out_dim(s.h, 3, l->stride, Padding::same);
            s.w = conv_out_dim(s.w, 3, l->stride, Padding::same);
            s.c = l->filters;
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            if (!s.spatial) bad_layer(i, "global_avg_pool applied to flattened input");
            s.spatial = false;
            s.f = s.c;
        } else if (std::get_if<FlattenLayer>(&layer)) {
            if (!s.spatial) bad_layer(i, "flatten applied twice");
            s.spatial = false;
            s.f = s.h * s.w * s.c;
        } else if (auto* l = std::get_if<DenseLayer>(&layer)) {
            if (s.spatial) bad_layer(i, "dense applied to spatial input (missing flatten?)");
            if (l->in_features != s.f)
                bad_layer(i, "dense '" + l->name + "' expects " + std::to_string(l->in_features) +
                                 " features, input has " + std::to_string(s.f));
            s.f = l->units;
        } else if (std::get_if<SoftmaxLayer>(&layer)) {
            if (s.spatial) bad_layer(i, "softmax applied to spatial input");
            if (!last) bad_layer(i, "softmax must be the final layer");
        }
    }
    if (s.spatial) throw DimensionError("model spec: output is not a logits vector");
    if (s.f != spec.num_classes)
        throw DimensionError("model spec: final width " + std::to_string(s.f) +
                             " does not match " + std::to_string(spec.num_classes) + " classes");
    return s.f;
}

namespace {

void init_conv(ModelWeights& w, const std::string& name, int kh, int kw, int in_ch, int out_ch,
               Rng& rng) {
    float limit = std::sqrt(6.0f / (float)(kh * kw * in_ch));
    Tensor kernel({kh, kw, in_ch, out_ch});
    for (auto& x : kernel.v) x = rng.uniform(-limit, limit);
    w.tensors[name + "/kernel"] = std::move(kernel);
    w.tensors[name + "/bias"] = Tensor({out_ch});
}

void init_bn(ModelWeights& w, const std::string& name, int channels) {
    w.tensors[name + "/gamma"] = Tensor::full({channels}, 1.0f);
    w.tensors[name + "/beta"] = Tensor({channels});
    w.tensors[name + "/running_mean"] = Tensor({channels});
    w.tensors[name + "/running_var"] = Tensor::full({channels}, 1.0f);
}

void init_dense(ModelWeights& w, const std::string& name, int in_features, int units, Rng& rng) {
    float limit = std::sqrt(6.0f / (float)in_features);
    Tensor kernel({in_features, units});
    for (auto& x : kernel.v) x = rng.uniform(-limit, limit);
    w.tensors[name + "/kernel"] = std::move(kernel);
    w.tensors[name + "/bias"] = Tensor({units});
}

constexpr float kBnMomentum = 0.99f;
constexpr float kBnEpsilon = 1e-5f;

const Tensor& get_tensor(const ModelWeights& w, const std::string& name) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end()) throw DataError("missing weight tensor '" + name + "'");
    return it->second;
}

Tensor& get_tensor_mut(ModelWeights& w, const std::string& name) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end()) throw DataError("missing weight tensor '" + name + "'");
    return it->second;
}

BatchNormParams bn_params(const ModelWeights& w, const std::string& name) {
    return BatchNormParams{get_tensor(w, name + "/gamma"), get_tensor(w, name + "/beta"),
                           get_tensor(w, name + "/running_mean"),
                           get_tensor(w, name + "/running_var"), kBnMomentum, kBnEpsilon};
}

} // namespace

bool ModelWeights::is_running_stat(const std::string& name) {
    auto ends_with = [&](const char* suffix) {
        size_t n = std::string(suffix).size();
        return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    return ends_with("/running_mean") || ends_with("/running_var");
}

std::vector<std::string> ModelWeights::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors)
        if (!is_running_stat(name)) out.push_back(name);
    return out;
}

int64_t ModelWeights::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : tensors)
        if (!is_running_stat(name)) n += t.numel();
    return n;
}

ModelWeights init_weights(const ModelSpec& spec, uint64_t seed) {
    validate_spec(spec);
    ModelWeights w;
    Rng rng(seed);
    for (const LayerDesc& layer : spec.layers) {
        if (auto* l = std::get_if<ConvLayer>(&layer)) {
            init_conv(w, l->name, l->kh, l->kw, l->in_ch, l->out_ch, rng);
        } else if (auto* l = std::get_if<BatchNormLayer>(&layer)) {
            init_bn(w, l->name, l->channels);
        } else if (auto* l = std::get_if<ResidualBlockLayer>(&layer)) {
            init_conv(w, l->name + ".conv1", 3, 3, l->in_ch, l->filters, rng);
            init_bn(w, l->name + ".bn1", l->filters);
            init_conv(w, l->name + ".conv2", 3, 3, l->filters, l->filters, rng);
            init_bn(w, l->name + ".bn2", l->filters);
            if (l->projection) init_conv(w, l->name + ".proj", 1, 1, l->in_ch, l->filters, rng);
        } else if (auto* l = std::get_if<DenseLayer>(&layer)) {
            init_dense(w, l->name, l->in_features, l->units, rng);
        }
    }
    return w;
}

BuiltModel build_baseline_cnn(int input_h, int input_w, int input_c, int num_classes,
                              uint64_t seed) {
    if (input_h % 8 != 0 || input_w % 8 != 0)
        throw DataError("baseline cnn: input " + std::to_string(input_h) + "x" +
                        std::to_string(input_w) +
                        " is not divisible by 8 (three 2x2 pooling stages)");
    ModelSpec spec;
    spec.input_h = input_h;
    spec.input_w = input_w;
    spec.input_c = input_c;
    spec.num_classes = num_classes;
    int filters[3] = {32, 64, 128};
    int in_ch = input_c;
    for (int i = 0; i < 3; ++i) {
        std::string idx = std::to_string(i + 1);
        spec.layers.push_back(ConvLayer{"c" + idx, 3, 3, in_ch, filters[i], 1, Padding::same});
        spec.layers.push_back(BatchNormLayer{"b" + idx, filters[i]});
        spec.layers.push_back(ReluLayer{});
        spec.layers.push_back(MaxPoolLayer{2, 2, Padding::valid});
        in_ch = filters[i];
    }
    spec.layers.push_back(FlattenLayer{});
    int flat = (input_h / 8) * (input_w / 8) * 128;
    spec.layers.push_back(DenseLayer{"fc1", flat, 128});
    spec.layers.push_back(ReluLayer{});
    spec.layers.push_back(DenseLayer{"out", 128, num_classes});
    spec.layers.push_back(SoftmaxLayer{});
    return BuiltModel{spec, init_weights(spec, seed)};
}

BuiltModel build_resnet(int input_h, int input_w, int input_c, int num_classes, uint64_t seed) {
    if (input_h < 8 || input_w < 8)
        throw DataError("resnet: input smaller than 8x8 cannot pass the stem");
    ModelSpec spec;
    spec.input_h = input_h;
    spec.input_w = input_w;
    spec.input_c = input_c;
    spec.num_classes = num_classes;
    spec.layers.push_back(ConvLayer{"stem.conv", 7, 7, input_c, 64, 2, Padding::same});
    spec.layers.push_back(BatchNormLayer{"stem.bn", 64});
    spec.layers.push_back(ReluLayer{});
    spec.layers.push_back(MaxPoolLayer{3, 2, Padding::same});
    int stage_filters[3] = {64, 128, 256};
    int in_ch = 64;
    for (int stage = 0; stage < 3; ++stage) {
        int filters = stage_filters[stage];
        int stride = stage == 0 ? 1 : 2;
        std::string base = "s" + std::to_string(stage + 1);
        bool proj = stride != 1 || in_ch != filters;
        spec.layers.push_back(ResidualBlockLayer{base + ".b1", in_ch, filters, stride, proj});
        spec.layers.push_back(ResidualBlockLayer{base + ".b2", filters, filters, 1, false});
        in_ch = filters;
    }
    spec.layers.push_back(GlobalAvgPoolLayer{});
    spec.layers.push_back(DenseLayer{"head.fc1", 256, 512});
    spec.layers.push_back(ReluLayer{});
    spec.layers.push_back(DenseLayer{"head.fc2", 512, 512});
    spec.layers.push_back(ReluLayer{});
    spec.layers.push_back(DenseLayer{"head.out", 512, num_classes});
    spec.layers.push_back(SoftmaxLayer{});
    return BuiltModel{spec, init_weights(spec, seed)};
}

Tensor residual_block_forward(const Tensor& x, const ResidualBlockLayer& block,
                              const ModelWeights& w) {
    ConvParams c1{get_tensor(w, block.name + ".conv1/kernel"),
                  get_tensor(w, block.name + ".conv1/bias"), block.stride, Padding::same};
    Tensor main = conv2d(x, c1);
    BatchNormParams b1 = bn_params(w, block.name + ".bn1");
    main = relu(batch_norm_infer(main, b1));
    ConvParams c2{get_tensor(w, block.name + ".conv2/kernel"),
                  get_tensor(w, block.name + ".conv2/bias"), 1, Padding::same};
    main = conv2d(main, c2);
    BatchNormParams b2 = bn_params(w, block.name + ".bn2");
    main = batch_norm_infer(main, b2);
    Tensor shortcut;
    if (block.projection) {
        ConvParams cp{get_tensor(w, block.name + ".proj/kernel"),
                      get_tensor(w, block.name + ".proj/bias"), block.stride, Padding::same};
        shortcut = conv2d(x, cp);
    } else {
        shortcut = x;
    }
    return relu(add(main, shortcut));
}

Tensor infer_logits(const ModelSpec& spec, const ModelWeights& w, const Tensor& x) {
    require_rank(x, 4, "model input");
    if (x.dim(1) != spec.input_h || x.dim(2) != spec.input_w || x.dim(3) != spec.input_c)
        throw DimensionError("model input " + x.shape_str() + " does not match spec input (" +
                             std::to_string(spec.input_h) + "," + std::to_string(spec.input_w) +
                             "," + std::to_string(spec.input_c) + ")");
    Tensor cur = x;
    for (const LayerDesc& layer : spec.layers) {
        if (auto* l = std::get_if<ConvLayer>(&layer)) {
            ConvParams p{get_tensor(w, l->name + "/kernel"), get_tensor(w, l->name + "/bias"),
                         l->stride, l->padding};
            cur = conv2d(cur, p);
        } else if (auto* l = std::get_if<BatchNormLayer>(&layer)) {
            BatchNormParams p = bn_params(w, l->name);
            cur = batch_norm_infer(cur, p);
        } else if (std::get_if<ReluLayer>(&layer)) {
            cur = relu(cur);
        } else if (auto* l = std::get_if<MaxPoolLayer>(&layer)) {
            cur = max_pool2d(cur, l->window, l->stride, l->padding);
        } else if (auto* l = std::get_if<ResidualBlockLayer>(&layer)) {
            cur = residual_block_forward(cur, *l, w);
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            cur = global_avg_pool(cur);
        } else if (std::get_if<FlattenLayer>(&layer)) {
            cur = flatten(cur);
        } else if (auto* l = std::get_if<DenseLayer>(&layer)) {
            cur = dense(cur, get_tensor(w, l->name + "/kernel"), get_tensor(w, l->name + "/bias"));
        } else if (std::get_if<SoftmaxLayer>(&layer)) {
            break; // logits end before a trailing softmax
        }
    }
    return cur;
}

Tensor predict_proba(const ModelSpec& spec, const ModelWeights& w, const Tensor& x) {
    return softmax(infer_logits(spec, w, x));
}

int tape_forward_logits(Tape& tape, const ModelSpec& spec, ModelWeights& w, int input_id,
                        std::map<std::string, int>* param_ids) {
    std::map<std::string, int> local;
    std::map<std::string, int>& ids = param_ids ? *param_ids : local;
    auto pid = [&](const std::string& name) {
        auto it = ids.find(name);
        if (it != ids.end()) return it->second;
        int id = tape.leaf(get_tensor(w, name));
        ids.emplace(name, id);
        return id;
    };
    auto tape_bn = [&](int x, const std::string& name) {
        return tape.batch_norm(x, pid(name + "/gamma"), pid(name + "/beta"),
                               get_tensor_mut(w, name + "/running_mean"),
                               get_tensor_mut(w, name + "/running_var"), kBnMomentum, kBnEpsilon);
    };
    int cur = input_id;
    for (const LayerDesc& layer : spec.layers) {
        if (auto* l = std::get_if<ConvLayer>(&layer)) {
            cur = tape.conv2d(cur, pid(l->name + "/kernel"), pid(l->name + "/bias"), l->stride,
                              l->padding);
        } else if (auto* l = std::get_if<BatchNormLayer>(&layer)) {
            cur = tape_bn(cur, l->name);
        } else if (std::get_if<ReluLayer>(&layer)) {
            cur = tape.relu(cur);
        } else if (auto* l = std::get_if<MaxPoolLayer>(&layer)) {
            cur = tape.max_pool2d(cur, l->window, l->stride, l->padding);
        } else if (auto* l = std::get_if<ResidualBlockLayer>(&layer)) {
            int shortcut = cur;
            int main = tape.conv2d(cur, pid(l->name + ".conv1/kernel"),
                                   pid(l->name + ".conv1/bias"), l->stride, Padding::same);
            main = tape_bn(main, l->name + ".bn1");
            main = tape.relu(main);
            main = tape.conv2d(main, pid(l->name + ".conv2/kernel"), pid(l->name + ".conv2/bias"),
                               1, Padding::same);
            main = tape_bn(main, l->name + ".bn2");
            if (l->projection)
                shortcut = tape.conv2d(cur, pid(l->name + ".proj/kernel"),
                                       pid(l->name + ".proj/bias"), l->stride, Padding::same);
            cur = tape.relu(tape.add(main, shortcut));
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            cur = tape.global_avg_pool(cur);
        } else if (std::get_if<FlattenLayer>(&layer)) {
            cur = tape.flatten(cur);
        } else if (auto* l = std::get_if<DenseLayer>(&layer)) {
            cur = tape.dense(cur, pid(l->name + "/kernel"), pid(l->name + "/bias"));
        } else if (std::get_if<SoftmaxLayer>(&layer)) {
            break;
        }
    }
    return cur;
}

} // namespace dstk
