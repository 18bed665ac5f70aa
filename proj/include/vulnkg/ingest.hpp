#pragma once

#include "vulnkg/cpe.hpp"
#include "vulnkg/util.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vulnkg::ingest {

enum class Source { nvd, redhat, mitre_cwe };
enum class FetchMode { live, offline };

Source parse_source(std::string_view s);
std::string_view to_string(Source s);

struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One verbatim document: a single CVE item (nvd, redhat) or a whole catalog.
struct RawDocument {
    std::string origin;  // file or URL the payload came from
    std::string body;
};

struct CveRecord {
    std::string cve_id;
    std::string description;
    std::set<std::string> cwe_ids;
    std::set<std::string> cpe_uris;  // full CPE 2.3 names, kept for audit
    Timestamp published{};
    Timestamp last_modified{};
    /// Shortened CPE -> earliest time it was attached to this CVE.
    std::map<std::string, Timestamp> cpe_first_seen;
};

struct CweRecord {
    std::string cwe_id;
    std::string name;
    std::string description;
    bool is_category = false;
    std::set<std::string> child_of;
    std::set<std::string> peer_of;
    std::set<std::string> can_precede;
    std::set<std::string> member_of;
    std::set<std::string> languages;
    std::set<std::string> technologies;
    std::set<std::string> consequences;
    std::optional<std::string> exploitation_likelihood;
};

struct CweCatalog {
    std::vector<CweRecord> records;
    Date snapshot_date{};
    std::size_t dropped_edges = 0;  // hierarchy edges to ids absent from the catalog
};

struct FetchOptions {
    Source source = Source::nvd;
    FetchMode mode = FetchMode::offline;
    /// Fixture directory/file (offline) or service base URL (live).
    std::string location;
    std::optional<Date> since;
    /// Raw payloads and the paging cursor are written here when set.
    std::filesystem::path cache_dir;
    std::string api_key;
    int page_size = 2000;
    int max_retries = 3;
    std::chrono::milliseconds backoff{1000};
    std::chrono::milliseconds request_delay{0};
    std::optional<int> max_pages;
};

/// Offline: reads the fixture manifest in order. Live: pages exhaustively.
std::vector<RawDocument> fetch_records(const FetchOptions& opts);
/// NVD change-history documents (one per change event).
std::vector<RawDocument> fetch_change_history(const FetchOptions& opts);

bool is_cve_id(std::string_view s);
bool is_cwe_id(std::string_view s);

CveRecord parse_cve_record(const RawDocument& raw, Source source);
/// Updates cpe_first_seen from "CPE Configuration" additions in NVD change events.
void apply_change_history(std::vector<CveRecord>& records, const std::vector<RawDocument>& history);
CweCatalog parse_cwe_catalog(const RawDocument& raw);

/// Extracts CPE 2.3 names embedded in free text (change-history values).
std::vector<std::string> find_cpe_names(std::string_view text);

/// Canonical text dump of parsed records (used for determinism checks and the raw cache index).
std::string dump_records(const std::vector<CveRecord>& records);

/// Minimal HTTP GET used by live mode; replaceable in tests.
struct HttpResponse {
    int status = 0;
    std::string body;
    std::optional<int> retry_after_seconds;
};
using HttpGet = std::function<HttpResponse(const std::string& url, const std::map<std::string, std::string>& headers)>;
HttpGet default_http_get();
std::vector<RawDocument> fetch_records(const FetchOptions& opts, const HttpGet& http);
std::vector<RawDocument> fetch_change_history(const FetchOptions& opts, const HttpGet& http);

}  // namespace vulnkg::ingest
