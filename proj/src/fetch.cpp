#include <httplib.h>

#include "dstk/fetch.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dstk/errors.hpp"

namespace fs = std::filesystem;

namespace dstk {

namespace {

// scheme://host[:port] and the request path.
bool split_url(const std::string& url, std::string& base, std::string& path) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return false;
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        base = url;
        path = "/";
    } else {
        base = url.substr(0, path_start);
        path = url.substr(path_start);
    }
    return base.size() > scheme_end + 3;
}

std::string sanitized_basename(const std::string& path) {
    std::string name = path.substr(path.find_last_of('/') + 1);
    if (auto q = name.find('?'); q != std::string::npos) name.resize(q);
    for (char& ch : name)
        if (!std::isalnum((unsigned char)ch) && ch != '.' && ch != '-' && ch != '_') ch = '_';
    return name.empty() ? "file" : name;
}

} // namespace

std::vector<ImageRecord> fetch_urls(const std::vector<std::string>& urls,
                                    const std::string& dest_dir, ClassLabel label,
                                    const FetchOptions& options) {
    fs::path dir(dest_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::vector<ImageRecord> records;
    std::set<std::string> seen;
    size_t index = 0;
    for (const auto& url : urls) {
        if (!seen.insert(url).second) continue;
        ImageRecord r;
        r.class_label = label;

        std::string base, req_path;
        if (!split_url(url, base, req_path)) {
            r.path = url;
            r.status = RecordStatus::fetch_failed;
            r.note = "malformed url";
            records.push_back(std::move(r));
            ++index;
            continue;
        }
        httplib::Client cli(base);
        cli.set_connection_timeout(options.timeout_seconds, 0);
        cli.set_read_timeout(options.timeout_seconds, 0);
        cli.set_follow_location(true);
        auto res = cli.Get(req_path);
        if (!res) {
            r.path = url;
            r.status = RecordStatus::fetch_failed;
            r.note = httplib::to_string(res.error());
        } else if (res->status != 200) {
            r.path = url;
            r.status = RecordStatus::fetch_failed;
            r.note = "http status " + std::to_string(res->status);
        } else {
            char prefix[16];
            std::snprintf(prefix, sizeof prefix, "%05zu_", index);
            fs::path file = dir / (prefix + sanitized_basename(req_path));
            std::ofstream out(file, std::ios::binary);
            if (!out || !out.write(res->body.data(), (std::streamsize)res->body.size()))
                throw IoError("cannot write " + file.string());
            r.path = file.string();
            r.byte_size = res->body.size();
            r.status = RecordStatus::pending;
        }
        records.push_back(std::move(r));
        ++index;
    }
    return records;
}

std::vector<std::string> read_url_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open url list: " + path);
    std::vector<std::string> urls;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        urls.push_back(line);
    }
    return urls;
}

} // namespace dstk
