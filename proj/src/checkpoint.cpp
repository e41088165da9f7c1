#include "dstk/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dstk {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'T', 'K'};
constexpr uint16_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append((const char*)p, n);
}
template <class T>
void put(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}
void put_str(std::string& out, const std::string& s) {
    put(out, (uint32_t)s.size());
    put_bytes(out, s.data(), s.size());
}
void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_str(out, name);
    put(out, (uint32_t)t.rank());
    for (int d : t.shape) put(out, (uint32_t)d);
    put_bytes(out, t.data(), sizeof(float) * (size_t)t.numel());
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("corrupt checkpoint: truncated file");
    }
    void read_bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <class T>
    T read() {
        T v;
        read_bytes(&v, sizeof(T));
        return v;
    }
    std::string read_str() {
        uint32_t n = read<uint32_t>();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    std::pair<std::string, Tensor> read_tensor() {
        std::string name = read_str();
        uint32_t rank = read<uint32_t>();
        if (rank > 8) throw DataError("corrupt checkpoint: implausible tensor rank");
        std::vector<int> shape((size_t)rank);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = (int)read<uint32_t>();
            numel *= d;
        }
        Tensor t(shape);
        read_bytes(t.data(), sizeof(float) * (size_t)numel);
        return {std::move(name), std::move(t)};
    }
};

uint64_t tensor_bytes(const std::string& name, const Tensor& t) {
    return 4 + name.size() + 4 + 4ull * (size_t)t.rank() + 4ull * (size_t)t.numel();
}

} // namespace

uint64_t checkpoint_byte_size(const ModelSpec& spec, const ModelWeights& weights,
                              const AdamState* optimizer) {
    std::string text = serialize(spec);
    uint64_t n = 4 + 2 + 4 + text.size() + 4 + 4 + 32 + 4;
    for (const auto& [name, t] : weights.tensors) n += tensor_bytes(name, t);
    n += 1;
    if (optimizer) {
        n += 8 + 4 + 4 + 4 + 4;
        for (const auto& [name, t] : optimizer->m) n += tensor_bytes("m:" + name, t);
        for (const auto& [name, t] : optimizer->v) n += tensor_bytes("v:" + name, t);
    }
    return n;
}

void save_checkpoint(const ModelSpec& spec, const ModelWeights& weights,
                     const AdamState* optimizer, uint32_t epoch, float val_accuracy,
                     const std::string& path) {
    std::string text = serialize(spec);
    std::array<uint8_t, 32> hash = spec_sha256(spec);

    std::string out;
    out.reserve((size_t)checkpoint_byte_size(spec, weights, optimizer));
    put_bytes(out, kMagic, 4);
    put(out, kVersion);
    put_str(out, text);
    put(out, epoch);
    put(out, val_accuracy);
    put_bytes(out, hash.data(), hash.size());
    put(out, (uint32_t)weights.tensors.size());
    for (const auto& [name, t] : weights.tensors) put_tensor(out, name, t);
    put(out, (uint8_t)(optimizer ? 1 : 0));
    if (optimizer) {
        put(out, (uint64_t)optimizer->t);
        put(out, optimizer->cfg.beta1);
        put(out, optimizer->cfg.beta2);
        put(out, optimizer->cfg.epsilon);
        put(out, (uint32_t)(optimizer->m.size() + optimizer->v.size()));
        for (const auto& [name, t] : optimizer->m) put_tensor(out, "m:" + name, t);
        for (const auto& [name, t] : optimizer->v) put_tensor(out, "v:" + name, t);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint file for writing: " + path);
    f.write(out.data(), (std::streamsize)out.size());
    f.flush();
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Cursor c{buf};
    char magic[4];
    if (buf.size() < 4) throw DataError("not a checkpoint: " + path);
    c.read_bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint: " + path);
    uint16_t version = c.read<uint16_t>();
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    std::string text = c.read_str();
    ck.spec = parse_model_spec(text);
    ck.meta.epoch = c.read<uint32_t>();
    ck.meta.val_accuracy = c.read<float>();
    c.read_bytes(ck.meta.spec_hash.data(), 32);
    if (ck.meta.spec_hash != spec_sha256(ck.spec))
        throw DataError("corrupt checkpoint: spec hash mismatch");

    uint32_t n_tensors = c.read<uint32_t>();
    for (uint32_t i = 0; i < n_tensors; ++i) {
        auto [name, t] = c.read_tensor();
        ck.weights.tensors[name] = std::move(t);
    }
    uint8_t has_opt = c.read<uint8_t>();
    if (has_opt) {
        AdamState s;
        s.t = c.read<uint64_t>();
        s.cfg.beta1 = c.read<float>();
        s.cfg.beta2 = c.read<float>();
        s.cfg.epsilon = c.read<float>();
        uint32_t n_moments = c.read<uint32_t>();
        for (uint32_t i = 0; i < n_moments; ++i) {
            auto [name, t] = c.read_tensor();
            if (name.size() < 3 || name[1] != ':')
                throw DataError("corrupt checkpoint: bad moment tensor name '" + name + "'");
            if (name[0] == 'm')
                s.m[name.substr(2)] = std::move(t);
            else if (name[0] == 'v')
                s.v[name.substr(2)] = std::move(t);
            else
                throw DataError("corrupt checkpoint: bad moment tensor name '" + name + "'");
        }
        ck.optimizer = std::move(s);
    }
    if (c.pos != buf.size()) throw DataError("corrupt checkpoint: trailing bytes");
    return ck;
}

void require_spec_match(const Checkpoint& ck, const ModelSpec& expected) {
    if (ck.meta.spec_hash != spec_sha256(expected))
        throw DataError("checkpoint was written for a different model spec");
}

} // namespace dstk
