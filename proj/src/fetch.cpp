#include "vulnkg/ingest.hpp"

#include <httplib.h>
#include <json.hpp>
#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iostream>
#include <thread>

namespace vulnkg::ingest {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_manifest(const fs::path& dir) {
    const auto manifest = dir / "manifest";
    if (!fs::exists(manifest)) throw IngestError("fixture directory " + dir.string() + " has no manifest");
    std::vector<std::string> files;
    for (const auto& line : split(read_file(manifest), '\n')) {
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        files.push_back(std::move(t));
    }
    return files;
}

/// Splits a page payload into per-record documents.
void explode_page(Source source, const std::string& origin, const std::string& body, std::vector<RawDocument>& out) {
    json page;
    try {
        page = json::parse(body);
    } catch (const json::parse_error& e) {
        throw IngestError("malformed page " + origin + ": " + e.what());
    }
    if (source == Source::nvd) {
        if (!page.is_object() || !page.contains("vulnerabilities")) {
            throw IngestError("malformed page " + origin + ": missing 'vulnerabilities'");
        }
        for (const auto& item : page.at("vulnerabilities")) out.push_back({origin, item.dump()});
    } else {
        if (page.is_array()) {
            for (const auto& item : page) out.push_back({origin, item.dump()});
        } else if (page.is_object()) {
            out.push_back({origin, page.dump()});
        } else {
            throw IngestError("malformed page " + origin);
        }
    }
}

void explode_history(const std::string& origin, const std::string& body, std::vector<RawDocument>& out) {
    json page;
    try {
        page = json::parse(body);
    } catch (const json::parse_error& e) {
        throw IngestError("malformed history page " + origin + ": " + e.what());
    }
    if (!page.contains("cveChanges")) throw IngestError("malformed history page " + origin + ": missing 'cveChanges'");
    for (const auto& item : page.at("cveChanges")) out.push_back({origin, item.dump()});
}

std::string unzip_first_xml(const std::string& zip) {
    // Walks local file headers; enough for the single-entry MITRE archive.
    std::size_t pos = 0;
    auto u16 = [&](std::size_t at) { return static_cast<unsigned>(static_cast<unsigned char>(zip[at])) | static_cast<unsigned>(static_cast<unsigned char>(zip[at + 1])) << 8; };
    auto u32 = [&](std::size_t at) { return u16(at) | u16(at + 2) << 16; };
    while (pos + 30 <= zip.size() && u32(pos) == 0x04034b50u) {
        const unsigned method = u16(pos + 8);
        const std::size_t csize = u32(pos + 18);
        const std::size_t usize = u32(pos + 22);
        const std::size_t name_len = u16(pos + 26);
        const std::size_t extra_len = u16(pos + 28);
        const std::string name = zip.substr(pos + 30, name_len);
        const std::size_t data = pos + 30 + name_len + extra_len;
        if (data + csize > zip.size()) throw IngestError("truncated zip archive");
        if (name.size() >= 4 && name.substr(name.size() - 4) == ".xml") {
            if (method == 0) return zip.substr(data, csize);
            if (method != 8) throw IngestError("unsupported zip compression method");
            std::string out(usize, '\0');
            z_stream zs{};
            zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(zip.data() + data));
            zs.avail_in = static_cast<uInt>(csize);
            zs.next_out = reinterpret_cast<Bytef*>(out.data());
            zs.avail_out = static_cast<uInt>(usize);
            if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw IngestError("inflateInit failed");
            const int rc = inflate(&zs, Z_FINISH);
            inflateEnd(&zs);
            if (rc != Z_STREAM_END) throw IngestError("corrupt zip entry " + name);
            return out;
        }
        pos = data + csize;
    }
    throw IngestError("zip archive holds no .xml entry");
}

std::vector<RawDocument> fetch_offline(const FetchOptions& opts) {
    const fs::path loc(opts.location);
    if (!fs::exists(loc)) throw IngestError("offline fixture not found: " + loc.string());
    std::vector<RawDocument> docs;
    if (opts.source == Source::mitre_cwe) {
        if (fs::is_directory(loc)) {
            for (const auto& f : read_manifest(loc)) docs.push_back({(loc / f).string(), read_file(loc / f)});
        } else {
            docs.push_back({loc.string(), read_file(loc)});
        }
        for (auto& d : docs) {
            if (d.body.rfind("PK", 0) == 0) d.body = unzip_first_xml(d.body);
        }
        return docs;
    }
    if (!fs::is_directory(loc)) throw IngestError("offline fixture must be a directory: " + loc.string());
    for (const auto& f : read_manifest(loc)) explode_page(opts.source, (loc / f).string(), read_file(loc / f), docs);
    return docs;
}

struct PageCache {
    fs::path dir;
    int next = 0;

    explicit PageCache(fs::path d) : dir(std::move(d)) {
        if (dir.empty()) return;
        fs::create_directories(dir);
        if (fs::exists(dir / "manifest")) next = static_cast<int>(read_manifest(dir).size());
    }
    void append(const std::string& body) {
        if (dir.empty()) return;
        char name[32];
        std::snprintf(name, sizeof name, "page-%05d.json", ++next);
        write_file(dir / name, body);
        std::ofstream(dir / "manifest", std::ios::app) << name << '\n';
    }
    std::optional<json> cursor() const {
        if (dir.empty() || !fs::exists(dir / "cursor.json")) return std::nullopt;
        return json::parse(read_file(dir / "cursor.json"));
    }
    void save_cursor(const json& c) const {
        if (!dir.empty()) write_file(dir / "cursor.json", c.dump());
    }
};

HttpResponse get_with_retry(const HttpGet& http, const std::string& url, const std::map<std::string, std::string>& headers,
                            const FetchOptions& opts) {
    int failures = 0;
    int throttled = 0;
    auto delay = opts.backoff;
    for (;;) {
        HttpResponse r = http(url, headers);
        if (r.status == 200) return r;
        const bool rate_limited = r.status == 429 || r.status == 403;
        if (rate_limited && throttled < 10) {
            ++throttled;
            const auto wait = r.retry_after_seconds ? std::chrono::milliseconds(*r.retry_after_seconds * 1000) : delay;
            std::this_thread::sleep_for(wait);
            continue;
        }
        if (r.status != 0 && r.status < 500 && !rate_limited) {
            throw IngestError("HTTP " + std::to_string(r.status) + " from " + url);
        }
        if (++failures > opts.max_retries) {
            throw IngestError("giving up on " + url + " after " + std::to_string(opts.max_retries) + " retries (last status " +
                              std::to_string(r.status) + ")");
        }
        std::this_thread::sleep_for(delay);
        delay *= 2;
    }
}

std::string iso_nvd(Date d) { return format_date(d) + "T00:00:00.000"; }

struct NvdEndpoint {
    const char* path;
    const char* array_key;
    const char* cache_name;
};
constexpr NvdEndpoint kCves{"/rest/json/cves/2.0", "vulnerabilities", "nvd"};
constexpr NvdEndpoint kHistory{"/rest/json/cvehistory/2.0", "cveChanges", "nvd_history"};

std::vector<RawDocument> fetch_nvd_live(const FetchOptions& opts, const HttpGet& http, const NvdEndpoint& ep) {
    PageCache cache(opts.cache_dir.empty() ? fs::path{} : opts.cache_dir / ep.cache_name);
    std::map<std::string, std::string> headers;
    if (!opts.api_key.empty()) headers["apiKey"] = opts.api_key;

    // NVD caps lastMod ranges at 120 days, so a `since` bound is walked in windows.
    std::vector<std::pair<Date, Date>> windows;
    if (opts.since) {
        const auto today = std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
        for (Date s = *opts.since; s < today; s += std::chrono::days{120}) windows.emplace_back(s, std::min(today, s + std::chrono::days{120}));
    } else {
        windows.emplace_back(Date{}, Date{});
    }

    std::size_t window = 0;
    long start = 0;
    if (auto c = cache.cursor()) {
        if (c->value("done", false)) {
            std::vector<RawDocument> cached;
            const auto dir = opts.cache_dir / ep.cache_name;
            for (const auto& f : read_manifest(dir)) {
                if (&ep == &kCves) {
                    explode_page(Source::nvd, (dir / f).string(), read_file(dir / f), cached);
                } else {
                    explode_history((dir / f).string(), read_file(dir / f), cached);
                }
            }
            return cached;
        }
        window = c->value("window", 0u);
        start = c->value("start_index", 0L);
    }
    std::vector<RawDocument> docs;
    int pages = 0;
    for (; window < windows.size(); ++window, start = 0) {
        for (;;) {
            std::string url = opts.location + ep.path + "?resultsPerPage=" + std::to_string(opts.page_size) +
                              "&startIndex=" + std::to_string(start);
            if (opts.since) {
                const bool history = &ep != &kCves;
                url += std::string(history ? "&changeStartDate=" : "&lastModStartDate=") + iso_nvd(windows[window].first) +
                       (history ? "&changeEndDate=" : "&lastModEndDate=") + iso_nvd(windows[window].second);
            }
            auto r = get_with_retry(http, url, headers, opts);
            json page;
            try {
                page = json::parse(r.body);
            } catch (const json::parse_error& e) {
                throw IngestError("malformed page from " + url + ": " + e.what());
            }
            if (!page.contains("totalResults") || !page.contains(ep.array_key)) {
                throw IngestError("malformed page from " + url + ": missing paging fields");
            }
            cache.append(r.body);
            if (&ep == &kCves) {
                explode_page(Source::nvd, url, r.body, docs);
            } else {
                explode_history(url, r.body, docs);
            }
            const long total = page.at("totalResults").get<long>();
            const long got = static_cast<long>(page.at(ep.array_key).size());
            start += got;
            cache.save_cursor({{"window", window}, {"start_index", start}, {"done", false}});
            ++pages;
            if (got == 0 || start >= total) break;
            if (opts.max_pages && pages >= *opts.max_pages) return docs;
            std::this_thread::sleep_for(opts.request_delay);
        }
    }
    cache.save_cursor({{"window", windows.size()}, {"start_index", 0}, {"done", true}});
    return docs;
}

std::vector<RawDocument> fetch_redhat_live(const FetchOptions& opts, const HttpGet& http) {
    PageCache cache(opts.cache_dir.empty() ? fs::path{} : opts.cache_dir / "redhat");
    std::vector<RawDocument> docs;
    int page_no = 1;
    if (auto c = cache.cursor()) page_no = c->value("page", 1);
    for (int pages = 0;; ++page_no, ++pages) {
        std::string url = opts.location + "/hydra/rest/securitydata/cve.json?per_page=" + std::to_string(opts.page_size) +
                          "&page=" + std::to_string(page_no);
        if (opts.since) url += "&after=" + format_date(*opts.since);
        auto r = get_with_retry(http, url, {}, opts);
        json page;
        try {
            page = json::parse(r.body);
        } catch (const json::parse_error& e) {
            throw IngestError("malformed page from " + url + ": " + e.what());
        }
        if (!page.is_array()) throw IngestError("malformed page from " + url + ": expected an array");
        if (page.empty()) break;
        for (const auto& summary : page) {
            const auto detail_url = summary.value("resource_url", std::string{});
            if (detail_url.empty()) {
                cache.append(summary.dump());
                docs.push_back({url, summary.dump()});
                continue;
            }
            auto d = get_with_retry(http, detail_url, {}, opts);
            cache.append(d.body);
            explode_page(Source::redhat, detail_url, d.body, docs);
            std::this_thread::sleep_for(opts.request_delay);
        }
        cache.save_cursor({{"page", page_no + 1}});
        if (opts.max_pages && pages + 1 >= *opts.max_pages) break;
    }
    return docs;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw IngestError("not an absolute URL: " + url);
    const auto path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, "/"};
    return {url.substr(0, path), url.substr(path)};
}

}  // namespace

HttpGet default_http_get() {
    return [](const std::string& url, const std::map<std::string, std::string>& headers) {
        const auto [host, path] = split_url(url);
        httplib::Client cli(host);
        cli.set_follow_location(true);
        cli.set_connection_timeout(30);
        cli.set_read_timeout(120);
        httplib::Headers h(headers.begin(), headers.end());
        auto res = cli.Get(path, h);
        HttpResponse out;
        if (!res) return out;
        out.status = res->status;
        out.body = std::move(res->body);
        if (res->has_header("Retry-After")) {
            try {
                out.retry_after_seconds = std::stoi(res->get_header_value("Retry-After"));
            } catch (const std::exception&) {
            }
        }
        return out;
    };
}

std::vector<RawDocument> fetch_records(const FetchOptions& opts) { return fetch_records(opts, default_http_get()); }

std::vector<RawDocument> fetch_records(const FetchOptions& opts, const HttpGet& http) {
    if (opts.mode == FetchMode::offline) return fetch_offline(opts);
    switch (opts.source) {
        case Source::nvd: return fetch_nvd_live(opts, http, kCves);
        case Source::redhat: return fetch_redhat_live(opts, http);
        case Source::mitre_cwe: {
            auto r = get_with_retry(http, opts.location, {}, opts);
            if (!opts.cache_dir.empty()) write_file(opts.cache_dir / "mitre_cwe" / "catalog.raw", r.body);
            if (r.body.rfind("PK", 0) == 0) r.body = unzip_first_xml(r.body);
            return {{opts.location, std::move(r.body)}};
        }
    }
    return {};
}

std::vector<RawDocument> fetch_change_history(const FetchOptions& opts) { return fetch_change_history(opts, default_http_get()); }

std::vector<RawDocument> fetch_change_history(const FetchOptions& opts, const HttpGet& http) {
    if (opts.mode == FetchMode::live) return fetch_nvd_live(opts, http, kHistory);
    fs::path loc(opts.location);
    if (fs::is_directory(loc / "history")) loc /= "history";
    std::vector<RawDocument> docs;
    if (!fs::is_directory(loc)) return docs;
    for (const auto& f : read_manifest(loc)) explode_history((loc / f).string(), read_file(loc / f), docs);
    return docs;
}

}  // namespace vulnkg::ingest
