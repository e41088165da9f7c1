#pragma once

// URL-list fetching. Each URL yields either a stored file (status pending,
// validated later by ingest) or a fetch_failed record carrying the reason;
// per-URL failures never abort the batch.

#include <string>
#include <vector>

#include "dstk/dataset.hpp"

namespace dstk {

struct FetchOptions {
    int timeout_seconds = 10;
};

// Duplicate URLs are fetched and recorded once (first occurrence wins).
// Unwritable destination -> IoError.
std::vector<ImageRecord> fetch_urls(const std::vector<std::string>& urls,
                                    const std::string& dest_dir, ClassLabel label,
                                    const FetchOptions& options = {});

// Plain text, one URL per line; blank lines and #-comments ignored.
std::vector<std::string> read_url_list(const std::string& path);

} // namespace dstk
