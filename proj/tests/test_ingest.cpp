#include <doctest.h>

#include "vulnkg/ingest.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <regex>
#include <thread>

using namespace vulnkg;
using namespace vulnkg::ingest;
namespace fs = std::filesystem;

namespace {

FetchOptions offline(Source s, std::string loc) {
    FetchOptions o;
    o.source = s;
    o.mode = FetchMode::offline;
    o.location = std::move(loc);
    return o;
}

std::vector<CveRecord> parse_all(const std::vector<RawDocument>& docs, Source s) {
    std::vector<CveRecord> out;
    for (const auto& d : docs) out.push_back(parse_cve_record(d, s));
    return out;
}

const CveRecord& find(const std::vector<CveRecord>& recs, const std::string& id) {
    auto it = std::find_if(recs.begin(), recs.end(), [&](const CveRecord& r) { return r.cve_id == id; });
    REQUIRE(it != recs.end());
    return *it;
}

const CweRecord& find_cwe(const CweCatalog& cat, const std::string& id) {
    auto it = std::find_if(cat.records.begin(), cat.records.end(), [&](const CweRecord& r) { return r.cwe_id == id; });
    REQUIRE(it != cat.records.end());
    return *it;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vulnkg_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("cpe parse examples") {
    auto c = parse_cpe_uri("cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*");
    CHECK(c.part == 'a');
    CHECK(c.vendor == "google");
    CHECK(c.product == "chrome");

    auto f = parse_cpe_uri("cpe:2.3:o:fedoraproject:fedora:37:*:*:*:*:*:*:*");
    CHECK(f.part == 'o');
    CHECK(f.product == "fedora");
    CHECK(f.version == "37");

    CHECK_THROWS_AS(parse_cpe_uri("cpe:2.3:x:google:chrome:*:*:*:*:*:*:*:*"), CpeError);
    CHECK_THROWS_AS(parse_cpe_uri("cpe:2.3:a:google:chrome:*:*:*"), CpeError);
    CHECK_THROWS_AS(parse_cpe_uri("cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*:*"), CpeError);
    CHECK_THROWS_AS(parse_cpe_uri("cpe:/a:google:chrome"), CpeError);
}

TEST_CASE("cpe escaped colon stays inside its component") {
    const std::string uri = R"(cpe:2.3:a:acme:web\:server:1.0:*:*:*:*:*:*:*)";
    auto c = parse_cpe_uri(uri);
    CHECK(c.product == R"(web\:server)");
    CHECK(c.version == "1.0");
    CHECK(format_cpe(c) == uri);
}

TEST_CASE("cpe shortening") {
    CHECK(shorten_cpe(parse_cpe_uri("cpe:2.3:o:debian:debian_linux:12.0:*:*:*:*:*:*:*")) == "cpe:2.3:o:debian:debian_linux");
    CHECK(shorten_cpe(parse_cpe_uri("cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*")) == "cpe:2.3:a:google:chrome");
    for (const auto* uri : {"cpe:2.3:o:debian:debian_linux:12.0:*:*:*:*:*:*:*", "cpe:2.3:h:cisco:asa_5505:-:*:*:*:*:*:*:*"}) {
        const auto s = shorten_cpe(parse_cpe_uri(uri));
        CHECK(shorten_cpe(parse_cpe_uri(s, true)) == s);
    }
}

TEST_CASE("cpe 2.2 uri conversion") {
    auto c = parse_cpe22_uri("cpe:/o:redhat:enterprise_linux:8");
    CHECK(c.part == 'o');
    CHECK(c.vendor == "redhat");
    CHECK(c.version == "8");
    CHECK(shorten_cpe(parse_cpe22_uri("cpe:/a:redhat:enterprise_linux:9::appstream")) == "cpe:2.3:a:redhat:enterprise_linux");
}

TEST_CASE("cpe format round trip over the fixture corpus") {
    static const std::regex re(R"(cpe:2\.3:[^"\s]+)");
    std::size_t checked = 0;
    for (const auto& entry : fs::directory_iterator("fixtures/nvd_small")) {
        if (entry.path().extension() != ".json") continue;
        const auto text = read_file(entry.path());
        for (std::sregex_iterator it(text.begin(), text.end(), re), end; it != end; ++it) {
            const auto uri = it->str();
            CHECK(format_cpe(parse_cpe_uri(uri)) == uri);
            ++checked;
        }
    }
    CHECK(checked > 500);
}

TEST_CASE("offline fetch counts") {
    CHECK(fetch_records(offline(Source::nvd, "fixtures/nvd_small")).size() == 500);
    CHECK(fetch_records(offline(Source::mitre_cwe, "fixtures/cwe.xml")).size() == 1);
    CHECK(fetch_records(offline(Source::redhat, "fixtures/redhat_small")).size() == 80);
    CHECK_THROWS_AS(fetch_records(offline(Source::nvd, "fixtures/does_not_exist")), IngestError);
}

TEST_CASE("nvd record for CVE-2023-4863") {
    auto recs = parse_all(fetch_records(offline(Source::nvd, "fixtures/nvd_small")), Source::nvd);
    const auto& r = find(recs, "CVE-2023-4863");
    CHECK(r.description.find("Heap buffer overflow in libwebp") != std::string::npos);
    CHECK(r.cwe_ids == std::set<std::string>{"CWE-787"});
    CHECK(r.cpe_first_seen.count("cpe:2.3:a:google:chrome"));
    CHECK(r.cpe_first_seen.count("cpe:2.3:o:debian:debian_linux"));
    CHECK(r.published <= r.last_modified);
}

TEST_CASE("nvd record edge cases") {
    const std::string base = R"({"cve":{"id":"CVE-2022-0001","published":"2022-02-01T10:00:00.000","lastModified":"2022-03-01T00:00:00.000",
        "descriptions":[{"lang":"en","value":"x"}],)";
    SUBCASE("no weakness element gives an empty set") {
        auto r = parse_cve_record({"t", base + R"("configurations":[]}})"}, Source::nvd);
        CHECK(r.cwe_ids.empty());
    }
    SUBCASE("placeholder weaknesses are not CWE ids") {
        auto r = parse_cve_record(
            {"t", base + R"("weaknesses":[{"description":[{"lang":"en","value":"NVD-CWE-noinfo"}]}]}})"}, Source::nvd);
        CHECK(r.cwe_ids.empty());
    }
    SUBCASE("duplicate cpe uris collapse") {
        const std::string m = R"({"vulnerable":true,"criteria":"cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*"})";
        auto r = parse_cve_record(
            {"t", base + R"("configurations":[{"nodes":[{"cpeMatch":[)" + m + "," + m + R"(]}]}]}})"}, Source::nvd);
        CHECK(r.cpe_uris.size() == 1);
        CHECK(r.cpe_first_seen.size() == 1);
    }
    SUBCASE("non-vulnerable and nested matches") {
        auto r = parse_cve_record({"t", base + R"("configurations":[{"nodes":[{"cpeMatch":[
            {"vulnerable":false,"criteria":"cpe:2.3:o:linux:linux_kernel:*:*:*:*:*:*:*:*"}],
            "children":[{"cpeMatch":[{"vulnerable":true,"criteria":"cpe:2.3:a:haxx:curl:8.0:*:*:*:*:*:*:*"}]}]}]}]}})"},
                                  Source::nvd);
        CHECK(r.cpe_first_seen.size() == 1);
        CHECK(r.cpe_first_seen.count("cpe:2.3:a:haxx:curl"));
    }
    SUBCASE("missing id or date is an error") {
        CHECK_THROWS_AS(parse_cve_record({"t", R"({"cve":{"published":"2022-01-01T00:00:00"}})"}, Source::nvd), IngestError);
        CHECK_THROWS_AS(parse_cve_record({"t", R"({"cve":{"id":"CVE-2022-0001"}})"}, Source::nvd), IngestError);
        CHECK_THROWS_AS(parse_cve_record({"t", "{not json"}, Source::nvd), IngestError);
    }
}

TEST_CASE("parsed CWE ids appear literally in the raw document") {
    for (auto src : {Source::nvd, Source::redhat}) {
        const auto docs = fetch_records(offline(src, src == Source::nvd ? "fixtures/nvd_small" : "fixtures/redhat_small"));
        for (const auto& d : docs) {
            const auto r = parse_cve_record(d, src);
            CHECK(is_cve_id(r.cve_id));
            CHECK(r.published <= r.last_modified);
            for (const auto& c : r.cwe_ids) {
                // the id must occur as a whole token, not as a prefix of a longer one
                const std::regex tok(c + R"((?!\d))");
                CHECK(std::regex_search(d.body, tok));
            }
        }
    }
}

TEST_CASE("redhat records") {
    auto recs = parse_all(fetch_records(offline(Source::redhat, "fixtures/redhat_small")), Source::redhat);
    std::size_t with_cpe = 0;
    for (const auto& r : recs) {
        with_cpe += !r.cpe_first_seen.empty();
        for (const auto& [k, t] : r.cpe_first_seen) {
            CHECK(k.rfind("cpe:2.3:", 0) == 0);
            CHECK(t >= r.published);
        }
    }
    CHECK(with_cpe > 0);

    auto r = parse_cve_record({"t", R"({"name":"CVE-2021-44228","public_date":"2021-12-10T00:00:00Z",
        "details":["Log4j lookup flaw."],"cwe":"(CWE-20|CWE-400)->CWE-502",
        "affected_release":[{"cpe":"cpe:/a:redhat:jboss_enterprise_application_platform:7","release_date":"2021-12-20T00:00:00Z"}],
        "package_state":[{"cpe":"cpe:/o:redhat:enterprise_linux:7","fix_state":"Not affected"}]})"},
                              Source::redhat);
    CHECK(r.cwe_ids == std::set<std::string>{"CWE-20", "CWE-400", "CWE-502"});
    REQUIRE(r.cpe_first_seen.size() == 1);
    CHECK(format_date(to_date(r.cpe_first_seen.begin()->second)) == "2021-12-20");
}

TEST_CASE("change history refines cpe first-seen times") {
    FetchOptions o = offline(Source::nvd, "fixtures/nvd_small");
    auto recs = parse_all(fetch_records(o), Source::nvd);
    auto history = fetch_change_history(o);
    CHECK(!history.empty());
    apply_change_history(recs, history);
    const auto& r = find(recs, "CVE-2023-4863");
    const auto pub = to_date(r.published);
    CHECK((to_date(r.cpe_first_seen.at("cpe:2.3:a:google:chrome")) - pub).count() == 2);
    CHECK((to_date(r.cpe_first_seen.at("cpe:2.3:o:debian:debian_linux")) - pub).count() == 8);
    CHECK((to_date(r.cpe_first_seen.at("cpe:2.3:a:mozilla:firefox")) - pub).count() == 31);
    for (const auto& rec : recs) {
        for (const auto& [k, t] : rec.cpe_first_seen) CHECK(t >= rec.published);
    }
}

TEST_CASE("cwe catalog") {
    auto docs = fetch_records(offline(Source::mitre_cwe, "fixtures/cwe.xml"));
    REQUIRE(docs.size() == 1);
    auto cat = parse_cwe_catalog(docs[0]);
    CHECK(format_date(cat.snapshot_date) == "2023-10-26");
    CHECK(find_cwe(cat, "CWE-79").child_of.count("CWE-74"));
    CHECK(find_cwe(cat, "CWE-20").can_precede.count("CWE-22"));
    CHECK(find_cwe(cat, "CWE-79").member_of.count("CWE-1347"));
    CHECK(find_cwe(cat, "CWE-787").languages.count("C"));
    CHECK(find_cwe(cat, "CWE-787").exploitation_likelihood == std::optional<std::string>("High"));
    CHECK(find_cwe(cat, "CWE-1218").is_category);

    const auto& bare = find_cwe(cat, "CWE-1021");
    CHECK(bare.child_of.empty());
    CHECK(bare.peer_of.empty());
    CHECK(bare.can_precede.empty());
    CHECK(bare.languages.empty());
    CHECK(bare.technologies.empty());
    CHECK(bare.consequences.empty());
    CHECK(!bare.exploitation_likelihood);

    // CWE-665 and CWE-346 are referenced but absent from the fixture catalog
    CHECK(cat.dropped_edges == 2);
    std::set<std::string> ids;
    for (const auto& r : cat.records) ids.insert(r.cwe_id);
    for (const auto& r : cat.records) {
        for (const auto* s : {&r.child_of, &r.peer_of, &r.can_precede, &r.member_of}) {
            CHECK(!s->count(r.cwe_id));
            for (const auto& t : *s) CHECK(ids.count(t));
        }
    }
    CHECK_THROWS_AS(parse_cwe_catalog({"t", "<Weakness_Catalog><Weaknesses>"}), IngestError);
    CHECK_THROWS_AS(parse_cwe_catalog({"t", "<Other/>"}), IngestError);
}

TEST_CASE("offline parsing is deterministic") {
    auto run = [] {
        FetchOptions o = offline(Source::nvd, "fixtures/nvd_small");
        auto recs = parse_all(fetch_records(o), Source::nvd);
        apply_change_history(recs, fetch_change_history(o));
        return dump_records(recs);
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(a.size() > 10000);
}

namespace {

nlohmann::json nvd_page(long start, long total, long count) {
    nlohmann::json items = nlohmann::json::array();
    for (long i = start; i < std::min(total, start + count); ++i) {
        items.push_back({{"cve",
                          {{"id", "CVE-2023-" + std::to_string(10000 + i)},
                           {"published", "2023-02-01T00:00:00.000"},
                           {"descriptions", {{{"lang", "en"}, {"value", "d"}}}}}}});
    }
    return {{"resultsPerPage", count}, {"startIndex", start}, {"totalResults", total}, {"vulnerabilities", items}};
}

struct LocalServer {
    httplib::Server svr;
    int port = 0;
    std::thread th;
    LocalServer() = default;
    void start() {
        port = svr.bind_to_any_port("127.0.0.1");
        th = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    std::string base() const { return "http://127.0.0.1:" + std::to_string(port); }
    ~LocalServer() {
        svr.stop();
        if (th.joinable()) th.join();
    }
};

}  // namespace

TEST_CASE("live nvd paging, retry and rate limiting against a local server") {
    LocalServer s;
    std::atomic<int> calls{0}, failed{0}, throttled{0};
    s.svr.Get("/rest/json/cves/2.0", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        const long start = std::stol(req.get_param_value("startIndex"));
        const long per = std::stol(req.get_param_value("resultsPerPage"));
        CHECK(req.get_header_value("apiKey") == "k");
        if (start == 3 && failed++ == 0) {
            res.status = 503;
            return;
        }
        if (start == 6 && throttled++ == 0) {
            res.status = 429;
            res.set_header("Retry-After", "0");
            return;
        }
        res.set_content(nvd_page(start, 8, per).dump(), "application/json");
    });
    s.start();

    FetchOptions o;
    o.source = Source::nvd;
    o.mode = FetchMode::live;
    o.location = s.base();
    o.page_size = 3;
    o.api_key = "k";
    o.backoff = std::chrono::milliseconds(1);
    o.cache_dir = scratch("live_nvd");
    auto docs = fetch_records(o, default_http_get());
    CHECK(docs.size() == 8);
    CHECK(calls == 5);  // 3 pages + one 503 + one 429

    // cached pages replay without touching the network
    FetchOptions replay = o;
    replay.location = "http://127.0.0.1:1";
    CHECK(fetch_records(replay, default_http_get()).size() == 8);
    // and the cache directory is itself an offline fixture
    CHECK(fetch_records(offline(Source::nvd, (o.cache_dir / "nvd").string())).size() == 8);
}

TEST_CASE("live fetch gives up after the retry budget") {
    int calls = 0;
    HttpGet always_down = [&](const std::string&, const std::map<std::string, std::string>&) {
        ++calls;
        return HttpResponse{500, "", std::nullopt};
    };
    FetchOptions o;
    o.source = Source::nvd;
    o.mode = FetchMode::live;
    o.location = "http://example.invalid";
    o.backoff = std::chrono::milliseconds(1);
    CHECK_THROWS_AS(fetch_records(o, always_down), IngestError);
    CHECK(calls == 4);

    calls = 0;
    HttpGet not_found = [&](const std::string&, const std::map<std::string, std::string>&) {
        ++calls;
        return HttpResponse{404, "", std::nullopt};
    };
    CHECK_THROWS_AS(fetch_records(o, not_found), IngestError);
    CHECK(calls == 1);

    HttpGet garbage = [](const std::string&, const std::map<std::string, std::string>&) {
        return HttpResponse{200, "<html>", std::nullopt};
    };
    CHECK_THROWS_AS(fetch_records(o, garbage), IngestError);
}

TEST_CASE("live fetch resumes from a persisted cursor") {
    std::vector<std::string> urls;
    int fail_at = 2;
    HttpGet http = [&](const std::string& url, const std::map<std::string, std::string>&) {
        urls.push_back(url);
        const auto pos = url.find("startIndex=");
        const long start = std::stol(url.substr(pos + 11));
        if (fail_at-- == 0) return HttpResponse{404, "", std::nullopt};
        return HttpResponse{200, nvd_page(start, 7, 2).dump(), std::nullopt};
    };
    FetchOptions o;
    o.source = Source::nvd;
    o.mode = FetchMode::live;
    o.location = "http://nvd.test";
    o.page_size = 2;
    o.cache_dir = scratch("resume");
    CHECK_THROWS(fetch_records(o, http));
    urls.clear();
    auto docs = fetch_records(o, http);
    CHECK(docs.size() == 3);  // the fetched remainder; earlier pages are in the cache
    REQUIRE(!urls.empty());
    CHECK(urls.front().find("startIndex=4") != std::string::npos);
    CHECK(fetch_records(offline(Source::nvd, (o.cache_dir / "nvd").string())).size() == 7);
}

TEST_CASE("live nvd window parameters and change history") {
    std::vector<std::string> urls;
    HttpGet http = [&](const std::string& url, const std::map<std::string, std::string>&) {
        urls.push_back(url);
        if (url.find("cvehistory") != std::string::npos) {
            nlohmann::json page = {{"totalResults", 1}, {"cveChanges", {{{"change", {{"cveId", "CVE-2023-10000"}}}}}}};
            return HttpResponse{200, page.dump(), std::nullopt};
        }
        return HttpResponse{200, nvd_page(0, 0, 0).dump(), std::nullopt};
    };
    FetchOptions o;
    o.source = Source::nvd;
    o.mode = FetchMode::live;
    o.location = "http://nvd.test";
    o.since = parse_date("2023-01-01");
    fetch_records(o, http);
    REQUIRE(!urls.empty());
    CHECK(urls.front().find("lastModStartDate=2023-01-01T00:00:00.000") != std::string::npos);
    CHECK(urls.front().find("lastModEndDate=2023-05-01T00:00:00.000") != std::string::npos);
    urls.clear();
    auto h = fetch_change_history(o, http);
    CHECK(!h.empty());
    CHECK(urls.front().find("changeStartDate=2023-01-01") != std::string::npos);
}

TEST_CASE("live redhat paging follows resource urls") {
    LocalServer s;
    s.svr.Get("/hydra/rest/securitydata/cve.json", [&](const httplib::Request& req, httplib::Response& res) {
        const int page = std::stoi(req.get_param_value("page"));
        CHECK(req.get_param_value("after") == "2023-01-01");
        nlohmann::json out = nlohmann::json::array();
        if (page <= 2) {
            for (int i = 0; i < 2; ++i) {
                const auto id = "CVE-2023-" + std::to_string(2000 + page * 10 + i);
                out.push_back({{"CVE", id}, {"resource_url", "http://127.0.0.1:" + std::to_string(s.port) + "/cve/" + id + ".json"}});
            }
        }
        res.set_content(out.dump(), "application/json");
    });
    s.svr.Get(R"(/cve/(CVE-[0-9-]+)\.json)", [](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json d = {{"name", req.matches[1].str()}, {"public_date", "2023-03-04T00:00:00Z"}, {"details", {"text"}}};
        res.set_content(d.dump(), "application/json");
    });
    s.start();
    FetchOptions o;
    o.source = Source::redhat;
    o.mode = FetchMode::live;
    o.location = s.base();
    o.page_size = 2;
    o.since = parse_date("2023-01-01");
    auto docs = fetch_records(o, default_http_get());
    REQUIRE(docs.size() == 4);
    for (const auto& d : docs) CHECK(parse_cve_record(d, Source::redhat).published >= parse_timestamp("2023-01-01"));
}

TEST_CASE("live services" * doctest::skip(std::getenv("VULNKG_LIVE_TESTS") == nullptr)) {
    FetchOptions o;
    o.source = Source::redhat;
    o.mode = FetchMode::live;
    o.location = "https://access.redhat.com";
    o.since = parse_date("2023-01-01");
    o.page_size = 50;
    o.max_pages = 1;
    auto docs = fetch_records(o);
    CHECK(!docs.empty());
    for (const auto& d : docs) CHECK(parse_cve_record(d, Source::redhat).published >= parse_timestamp("2023-01-01"));
}
