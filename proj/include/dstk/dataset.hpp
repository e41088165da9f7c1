#pragma once

// Corpus acquisition bookkeeping: validation, perceptual dedup, before/after
// accounting, stratified splitting and decode-for-training.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dstk/model.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

enum class ImageFormat { jpeg, png };
enum class RecordStatus { valid, corrupt, duplicate_removed, fetch_failed, pending };

const char* to_string(ImageFormat f);
const char* to_string(RecordStatus s);

struct ImageRecord {
    std::string path;
    ClassLabel class_label = ClassLabel::earthquake;
    uint64_t byte_size = 0;
    std::optional<ImageFormat> format; // present iff a decodable header was found
    std::optional<uint64_t> phash;     // present iff status is valid or duplicate_removed
    RecordStatus status = RecordStatus::pending;
    std::string note; // failure reason for fetch_failed records
};

struct ClassCounts {
    int64_t before = 0;
    int64_t after = 0;
};

struct DatasetManifest {
    std::array<std::vector<ImageRecord>, 4> classes; // indexed by class code
    std::array<ClassCounts, 4> counts;
    int64_t total_before = 0;
    int64_t total_after = 0;

    // Derives counts from the records: before = every record of the class,
    // after = the valid ones.
    void recount();
};

// Magic-byte classification. ok=false with a format means a recognized but
// corrupt file (truncated JPEG, PNG without IEND); ok=false without a format
// means the bytes are not JPEG or PNG at all.
struct Validation {
    bool ok = false;
    std::optional<ImageFormat> format;
    std::string reason;
};
Validation validate_image(const std::vector<uint8_t>& bytes);

// Scans root/{earthquake,flood,volcano,wildfire}, validates and hashes every
// file not on the exclusion list, dedups within class and recounts. Missing
// class folder -> DataError naming it.
DatasetManifest ingest_folders(const std::string& root,
                               const std::set<std::string>& exclude = {});

// Flags within-class duplicate groups (transitive closure over pairs with
// similarity >= threshold); the lexicographically smallest path survives.
// A valid record without a hash -> DataError.
DatasetManifest dedup_manifest(DatasetManifest manifest, double similarity_threshold = 0.75);

enum class Split { train, test };

struct SplitAssignment {
    float train_fraction = 0.8f;
    uint64_t seed = 0;
    std::map<std::string, Split> part; // path of every valid record
};

// Per class: sort valid records by path, shuffle with a per-class stream of
// `seed`, take round(fraction * n) for train. Empty class -> DataError.
SplitAssignment stratified_split(const DatasetManifest& manifest, float train_fraction = 0.8f,
                                 uint64_t seed = 0);

// Decode to RGB, bilinear-resize to target x target, values in [0, 1].
Tensor decode_and_resize(const std::string& path, int target);

// Fixed-width before/after table in the report layout (per-class rows plus a
// Total row).
std::string render_counts_table(const DatasetManifest& manifest);

// JSON Lines: one record per line plus a trailing summary object.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Plain text, one path per line; blank lines and #-comments ignored.
std::set<std::string> read_exclusion_list(const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t size);

} // namespace dstk
