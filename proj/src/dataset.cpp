#include "dstk/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dstk/errors.hpp"
#include "dstk/image.hpp"
#include "dstk/phash.hpp"
#include "dstk/rng.hpp"
#include "dstk/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dstk {

const char* to_string(ImageFormat f) { return f == ImageFormat::jpeg ? "jpeg" : "png"; }

const char* to_string(RecordStatus s) {
    switch (s) {
        case RecordStatus::valid: return "valid";
        case RecordStatus::corrupt: return "corrupt";
        case RecordStatus::duplicate_removed: return "duplicate_removed";
        case RecordStatus::fetch_failed: return "fetch_failed";
        case RecordStatus::pending: return "pending";
    }
    return "?";
}

namespace {

std::optional<ImageFormat> format_from_string(const std::string& s) {
    if (s == "jpeg") return ImageFormat::jpeg;
    if (s == "png") return ImageFormat::png;
    return std::nullopt;
}

std::optional<RecordStatus> status_from_string(const std::string& s) {
    if (s == "valid") return RecordStatus::valid;
    if (s == "corrupt") return RecordStatus::corrupt;
    if (s == "duplicate_removed") return RecordStatus::duplicate_removed;
    if (s == "fetch_failed") return RecordStatus::fetch_failed;
    if (s == "pending") return RecordStatus::pending;
    return std::nullopt;
}

std::string hash_to_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

uint64_t hex_to_hash(const std::string& s) {
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
        throw DataError("bad phash value: " + s);
    return std::stoull(s, nullptr, 16);
}

uint32_t be32(const uint8_t* p) {
    return ((uint32_t)p[0] << 24) | ((uint32_t)p[1] << 16) | ((uint32_t)p[2] << 8) | p[3];
}

} // namespace

void DatasetManifest::recount() {
    total_before = total_after = 0;
    for (int c = 0; c < 4; ++c) {
        int64_t before = (int64_t)classes[(size_t)c].size();
        int64_t after = 0;
        for (const auto& r : classes[(size_t)c])
            if (r.status == RecordStatus::valid) ++after;
        counts[(size_t)c] = {before, after};
        total_before += before;
        total_after += after;
    }
}

Validation validate_image(const std::vector<uint8_t>& bytes) {
    static const uint8_t png_sig[8] = {0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        size_t n = bytes.size();
        if (n >= 4 && bytes[n - 2] == 0xFF && bytes[n - 1] == 0xD9)
            return {true, ImageFormat::jpeg, ""};
        return {false, ImageFormat::jpeg, "jpeg missing end marker"};
    }
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) {
        // Chunk walk: length-prefixed chunks ending with IEND, IHDR first.
        size_t pos = 8;
        bool first = true;
        while (pos + 8 <= bytes.size()) {
            uint32_t len = be32(bytes.data() + pos);
            const char* type = (const char*)bytes.data() + pos + 4;
            if (first && std::memcmp(type, "IHDR", 4) != 0)
                return {false, ImageFormat::png, "png missing IHDR"};
            first = false;
            size_t next = pos + 12 + (size_t)len; // header + data + crc
            if (next > bytes.size()) return {false, ImageFormat::png, "png truncated chunk"};
            if (std::memcmp(type, "IEND", 4) == 0) return {true, ImageFormat::png, ""};
            pos = next;
        }
        return {false, ImageFormat::png, "png missing IEND"};
    }
    return {false, std::nullopt, "not a jpeg or png"};
}

DatasetManifest ingest_folders(const std::string& root, const std::set<std::string>& exclude) {
    DatasetManifest m;
    struct Job {
        std::string path;
        int class_code;
        uint64_t byte_size;
    };
    std::vector<Job> jobs;
    for (int c = 0; c < 4; ++c) {
        fs::path dir = fs::path(root) / to_string(class_from_code(c));
        if (!fs::is_directory(dir)) throw DataError("missing class folder: " + dir.string());
        std::vector<std::string> paths;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) paths.push_back(entry.path().string());
        std::sort(paths.begin(), paths.end());
        for (auto& p : paths) {
            if (exclude.count(p)) continue;
            jobs.push_back({p, c, (uint64_t)fs::file_size(p)});
        }
    }

    std::vector<ImageRecord> records(jobs.size());
    parallel_ranges((int64_t)jobs.size(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const Job& job = jobs[(size_t)i];
            ImageRecord r;
            r.path = job.path;
            r.class_label = class_from_code(job.class_code);
            r.byte_size = job.byte_size;
            std::vector<uint8_t> bytes = read_file_bytes(job.path);
            Validation v = validate_image(bytes);
            r.format = v.format;
            if (!v.ok) {
                r.status = RecordStatus::corrupt;
                r.note = v.reason;
            } else {
                try {
                    r.phash = phash_of_bytes(bytes);
                    r.status = RecordStatus::valid;
                } catch (const DataError& e) {
                    r.status = RecordStatus::corrupt;
                    r.note = e.what();
                }
            }
            records[(size_t)i] = std::move(r);
        }
    });

    for (auto& r : records) m.classes[(size_t)r.class_label].push_back(std::move(r));
    m.recount();
    return dedup_manifest(std::move(m));
}

DatasetManifest dedup_manifest(DatasetManifest manifest, double similarity_threshold) {
    // similarity >= t  <=>  hamming <= 64 (1 - t)
    int limit = (int)std::floor(64.0 * (1.0 - similarity_threshold) + 1e-9);
    for (auto& records : manifest.classes) {
        std::vector<size_t> valid;
        for (size_t i = 0; i < records.size(); ++i) {
            if (records[i].status != RecordStatus::valid) continue;
            if (!records[i].phash) throw DataError("unhashed record: " + records[i].path);
            valid.push_back(i);
        }
        // union-find over the valid records
        std::vector<size_t> parent(valid.size());
        std::iota(parent.begin(), parent.end(), size_t{0});
        auto find = [&](size_t a) {
            while (parent[a] != a) a = parent[a] = parent[parent[a]];
            return a;
        };
        for (size_t a = 0; a < valid.size(); ++a)
            for (size_t b = a + 1; b < valid.size(); ++b)
                if (hamming64(*records[valid[a]].phash, *records[valid[b]].phash) <= limit) {
                    size_t ra = find(a), rb = find(b);
                    if (ra != rb) parent[rb] = ra;
                }
        std::map<size_t, size_t> survivor; // root -> index of smallest path
        for (size_t a = 0; a < valid.size(); ++a) {
            size_t root = find(a);
            auto it = survivor.find(root);
            if (it == survivor.end() || records[valid[a]].path < records[valid[it->second]].path)
                survivor[root] = a;
        }
        for (size_t a = 0; a < valid.size(); ++a)
            if (survivor[find(a)] != a) records[valid[a]].status = RecordStatus::duplicate_removed;
    }
    manifest.recount();
    return manifest;
}

SplitAssignment stratified_split(const DatasetManifest& manifest, float train_fraction,
                                 uint64_t seed) {
    if (train_fraction < 0.0f || train_fraction > 1.0f)
        throw DataError("train_fraction out of [0,1]");
    SplitAssignment sa;
    sa.train_fraction = train_fraction;
    sa.seed = seed;
    for (int c = 0; c < 4; ++c) {
        std::vector<std::string> paths;
        for (const auto& r : manifest.classes[(size_t)c])
            if (r.status == RecordStatus::valid) paths.push_back(r.path);
        if (paths.empty())
            throw DataError(std::string("class ") + to_string(class_from_code(c)) +
                            " has no valid records");
        std::sort(paths.begin(), paths.end());
        Rng rng(mix64(seed, (uint64_t)c));
        rng.shuffle(paths);
        auto n_train = (size_t)std::llround((double)train_fraction * (double)paths.size());
        for (size_t i = 0; i < paths.size(); ++i)
            sa.part[paths[i]] = i < n_train ? Split::train : Split::test;
    }
    return sa;
}

Tensor decode_and_resize(const std::string& path, int target) {
    ImageU8 img = decode_image(read_file_bytes(path));
    return resize_bilinear(to_float(img), target, target);
}

std::string render_counts_table(const DatasetManifest& manifest) {
    // Report rows follow the flood/wildfire/earthquake/volcano layout.
    static const ClassLabel order[4] = {ClassLabel::flood, ClassLabel::wildfire,
                                        ClassLabel::earthquake, ClassLabel::volcano};
    std::ostringstream out;
    char line[80];
    std::snprintf(line, sizeof line, "%-12s %8s %8s\n", "Disaster", "Before", "After");
    out << line;
    for (ClassLabel c : order) {
        const auto& cc = manifest.counts[(size_t)c];
        std::string name = to_string(c);
        name[0] = (char)std::toupper((unsigned char)name[0]);
        std::snprintf(line, sizeof line, "%-12s %8lld %8lld\n", name.c_str(),
                      (long long)cc.before, (long long)cc.after);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-12s %8lld %8lld\n", "Total",
                  (long long)manifest.total_before, (long long)manifest.total_after);
    out << line;
    return out.str();
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ostringstream out;
    for (int c = 0; c < 4; ++c)
        for (const auto& r : manifest.classes[(size_t)c]) {
            json j;
            j["path"] = r.path;
            j["class"] = to_string(r.class_label);
            j["byte_size"] = r.byte_size;
            if (r.format) j["format"] = to_string(*r.format);
            if (r.phash) j["phash"] = hash_to_hex(*r.phash);
            j["status"] = to_string(r.status);
            if (!r.note.empty()) j["note"] = r.note;
            out << j.dump() << '\n';
        }
    json summary;
    for (int c = 0; c < 4; ++c) {
        const auto& cc = manifest.counts[(size_t)c];
        summary["classes"][to_string(class_from_code(c))] = {{"before", cc.before},
                                                             {"after", cc.after}};
    }
    summary["total_before"] = manifest.total_before;
    summary["total_after"] = manifest.total_after;
    out << json{{"summary", summary}}.dump() << '\n';
    std::string text = out.str();
    write_file_bytes(path, text.data(), text.size());
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    DatasetManifest m;
    bool saw_summary = false;
    json stored_summary;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("summary")) {
            stored_summary = j["summary"];
            saw_summary = true;
            continue;
        }
        ImageRecord r;
        try {
            r.path = j.at("path").get<std::string>();
            auto cls = class_from_string(j.at("class").get<std::string>());
            if (!cls) throw DataError("unknown class");
            r.class_label = *cls;
            r.byte_size = j.at("byte_size").get<uint64_t>();
            if (j.contains("format")) {
                r.format = format_from_string(j["format"].get<std::string>());
                if (!r.format) throw DataError("unknown format");
            }
            if (j.contains("phash")) r.phash = hex_to_hash(j["phash"].get<std::string>());
            auto st = status_from_string(j.at("status").get<std::string>());
            if (!st) throw DataError("unknown status");
            r.status = *st;
            if (j.contains("note")) r.note = j["note"].get<std::string>();
        } catch (const json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        m.classes[(size_t)r.class_label].push_back(std::move(r));
    }
    m.recount();
    if (saw_summary) {
        for (int c = 0; c < 4; ++c) {
            const json& cj = stored_summary.at("classes").at(to_string(class_from_code(c)));
            if (cj.at("before").get<int64_t>() != m.counts[(size_t)c].before ||
                cj.at("after").get<int64_t>() != m.counts[(size_t)c].after)
                throw DataError("manifest summary disagrees with records");
        }
    }
    return m;
}

std::set<std::string> read_exclusion_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open exclusion list: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        out.insert(line);
    }
    return out;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path);
    auto size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes((size_t)size);
    if (size > 0 && !in.read((char*)bytes.data(), size)) throw IoError("cannot read " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write((const char*)data, (std::streamsize)size))
        throw IoError("cannot write " + path);
}

} // namespace dstk
