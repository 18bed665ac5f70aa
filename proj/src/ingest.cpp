#include "vulnkg/ingest.hpp"

#include <json.hpp>

#include <algorithm>
#include <regex>
#include <sstream>

namespace vulnkg::ingest {

using nlohmann::json;

Source parse_source(std::string_view s) {
    if (s == "nvd") return Source::nvd;
    if (s == "redhat") return Source::redhat;
    if (s == "mitre_cwe" || s == "cwe") return Source::mitre_cwe;
    throw std::invalid_argument("unknown source '" + std::string(s) + "'");
}

std::string_view to_string(Source s) {
    switch (s) {
        case Source::nvd: return "nvd";
        case Source::redhat: return "redhat";
        case Source::mitre_cwe: return "mitre_cwe";
    }
    return "?";
}

bool is_cve_id(std::string_view s) {
    static const std::regex re(R"(CVE-\d{4}-\d{4,})");
    return std::regex_match(s.begin(), s.end(), re);
}

bool is_cwe_id(std::string_view s) {
    static const std::regex re(R"(CWE-\d+)");
    return std::regex_match(s.begin(), s.end(), re);
}

namespace {

std::vector<std::string> cwe_tokens(std::string_view text) {
    static const std::regex re(R"(CWE-\d+)");
    std::vector<std::string> out;
    for (std::regex_iterator<std::string_view::const_iterator> it(text.begin(), text.end(), re), end; it != end; ++it) {
        out.push_back(it->str());
    }
    return out;
}

void add_cpe(CveRecord& rec, const CpeName& name, Timestamp seen) {
    rec.cpe_uris.insert(format_cpe(name));
    const auto key = shorten_cpe(name);
    auto [it, inserted] = rec.cpe_first_seen.emplace(key, seen);
    if (!inserted) it->second = std::min(it->second, seen);
}

void collect_nvd_nodes(const json& nodes, CveRecord& rec) {
    for (const auto& node : nodes) {
        if (auto m = node.find("cpeMatch"); m != node.end()) {
            for (const auto& match : *m) {
                if (!match.value("vulnerable", true)) continue;
                const auto uri = match.value("criteria", match.value("cpe23Uri", std::string{}));
                if (uri.empty()) continue;
                add_cpe(rec, parse_cpe_uri(uri), rec.published);
            }
        }
        if (auto c = node.find("children"); c != node.end()) collect_nvd_nodes(*c, rec);
    }
}

CveRecord parse_nvd(const json& doc) {
    const json& cve = doc.contains("cve") ? doc.at("cve") : doc;
    CveRecord rec;
    rec.cve_id = cve.value("id", std::string{});
    if (rec.cve_id.empty()) throw IngestError("NVD record without a CVE id");
    if (!is_cve_id(rec.cve_id)) throw IngestError("malformed CVE id '" + rec.cve_id + "'");
    if (!cve.contains("published")) throw IngestError(rec.cve_id + ": record has no publication date");
    rec.published = parse_timestamp(cve.at("published").get<std::string>());
    rec.last_modified = cve.contains("lastModified") ? parse_timestamp(cve.at("lastModified").get<std::string>()) : rec.published;
    if (rec.last_modified < rec.published) rec.last_modified = rec.published;

    if (auto d = cve.find("descriptions"); d != cve.end()) {
        for (const auto& entry : *d) {
            if (entry.value("lang", "") == "en") {
                rec.description = entry.value("value", "");
                break;
            }
        }
        if (rec.description.empty() && !d->empty()) rec.description = d->front().value("value", "");
    }
    if (auto w = cve.find("weaknesses"); w != cve.end()) {
        for (const auto& weakness : *w) {
            for (const auto& desc : weakness.value("description", json::array())) {
                const auto v = desc.value("value", "");
                // NVD-CWE-Other / NVD-CWE-noinfo are placeholders, not weaknesses
                if (is_cwe_id(v)) rec.cwe_ids.insert(v);
            }
        }
    }
    if (auto c = cve.find("configurations"); c != cve.end()) {
        for (const auto& config : *c) {
            if (auto n = config.find("nodes"); n != config.end()) collect_nvd_nodes(*n, rec);
        }
    }
    return rec;
}

CveRecord parse_redhat(const json& doc) {
    CveRecord rec;
    rec.cve_id = doc.value("name", doc.value("CVE", std::string{}));
    if (rec.cve_id.empty()) throw IngestError("Red Hat record without a CVE id");
    if (!is_cve_id(rec.cve_id)) throw IngestError("malformed CVE id '" + rec.cve_id + "'");
    const auto pub = doc.value("public_date", std::string{});
    if (pub.empty()) throw IngestError(rec.cve_id + ": record has no publication date");
    rec.published = parse_timestamp(pub);
    rec.last_modified = rec.published;

    if (auto d = doc.find("details"); d != doc.end() && d->is_array() && !d->empty()) {
        std::string text;
        for (const auto& part : *d) {
            if (!text.empty()) text += ' ';
            text += trim(part.get<std::string>());
        }
        rec.description = text;
    }
    if (rec.description.empty()) {
        if (auto b = doc.find("bugzilla"); b != doc.end() && b->is_object()) rec.description = b->value("description", "");
    }
    if (rec.description.empty()) rec.description = doc.value("bugzilla_description", "");

    if (auto c = doc.find("cwe"); c != doc.end() && c->is_string()) {
        for (auto& id : cwe_tokens(c->get<std::string>())) rec.cwe_ids.insert(std::move(id));
    }

    auto bind = [](const std::string& uri) -> std::optional<CpeName> {
        if (uri.rfind("cpe:2.3:", 0) == 0) return parse_cpe_uri(uri);
        if (uri.rfind("cpe:/", 0) == 0) return parse_cpe22_uri(uri);
        return std::nullopt;
    };
    if (auto a = doc.find("affected_release"); a != doc.end() && a->is_array()) {
        for (const auto& rel : *a) {
            const auto cpe = bind(rel.value("cpe", std::string{}));
            if (!cpe) continue;
            Timestamp seen = rec.published;
            if (const auto date = rel.value("release_date", std::string{}); !date.empty()) {
                seen = std::max(rec.published, parse_timestamp(date));
            }
            rec.last_modified = std::max(rec.last_modified, seen);
            add_cpe(rec, *cpe, seen);
        }
    }
    if (auto p = doc.find("package_state"); p != doc.end() && p->is_array()) {
        for (const auto& st : *p) {
            if (st.value("fix_state", "") == "Not affected") continue;
            if (const auto cpe = bind(st.value("cpe", std::string{}))) add_cpe(rec, *cpe, rec.published);
        }
    }
    return rec;
}

}  // namespace

CveRecord parse_cve_record(const RawDocument& raw, Source source) {
    json doc;
    try {
        doc = json::parse(raw.body);
    } catch (const json::parse_error& e) {
        throw IngestError("unparseable document from " + raw.origin + ": " + e.what());
    }
    try {
        switch (source) {
            case Source::nvd: return parse_nvd(doc);
            case Source::redhat: return parse_redhat(doc);
            case Source::mitre_cwe: break;
        }
    } catch (const json::exception& e) {
        throw IngestError("schema error in " + raw.origin + ": " + e.what());
    }
    throw std::invalid_argument("parse_cve_record: source must be nvd or redhat");
}

std::vector<std::string> find_cpe_names(std::string_view text) {
    static const std::regex re(R"(cpe:2\.3:[aho](?::(?:\\.|[^:\s\\])+){10})");
    std::vector<std::string> out;
    for (std::regex_iterator<std::string_view::const_iterator> it(text.begin(), text.end(), re), end; it != end; ++it) {
        out.push_back(it->str());
    }
    return out;
}

void apply_change_history(std::vector<CveRecord>& records, const std::vector<RawDocument>& history) {
    std::map<std::string, CveRecord*> by_id;
    for (auto& r : records) by_id[r.cve_id] = &r;
    for (const auto& raw : history) {
        json doc;
        try {
            doc = json::parse(raw.body);
        } catch (const json::parse_error& e) {
            throw IngestError("unparseable change document from " + raw.origin + ": " + e.what());
        }
        const json& change = doc.contains("change") ? doc.at("change") : doc;
        auto it = by_id.find(change.value("cveId", std::string{}));
        if (it == by_id.end()) continue;
        CveRecord& rec = *it->second;
        const auto created = parse_timestamp(change.at("created").get<std::string>());
        for (const auto& detail : change.value("details", json::array())) {
            if (detail.value("type", "") != "CPE Configuration") continue;
            const auto action = detail.value("action", "");
            if (action != "Added" && action != "Changed") continue;
            const auto before = find_cpe_names(detail.value("oldValue", ""));
            std::set<std::string> old_short;
            for (const auto& u : before) old_short.insert(shorten_cpe(parse_cpe_uri(u)));
            for (const auto& u : find_cpe_names(detail.value("newValue", ""))) {
                const auto name = parse_cpe_uri(u);
                const auto key = shorten_cpe(name);
                if (old_short.count(key)) continue;
                rec.cpe_uris.insert(format_cpe(name));
                const auto seen = std::max(created, rec.published);
                auto [pos, inserted] = rec.cpe_first_seen.emplace(key, seen);
                // the current record lists the CPE at publication time; history refines it
                if (!inserted && (pos->second == rec.published || seen < pos->second)) pos->second = seen;
            }
        }
        rec.last_modified = std::max(rec.last_modified, created);
    }
}

std::string dump_records(const std::vector<CveRecord>& records) {
    std::ostringstream os;
    for (const auto& r : records) {
        os << r.cve_id << '\t' << format_timestamp(r.published) << '\t' << format_timestamp(r.last_modified) << '\n';
        os << "  desc\t" << r.description << '\n';
        for (const auto& c : r.cwe_ids) os << "  cwe\t" << c << '\n';
        for (const auto& c : r.cpe_uris) os << "  cpe\t" << c << '\n';
        for (const auto& [k, t] : r.cpe_first_seen) os << "  seen\t" << k << '\t' << format_timestamp(t) << '\n';
    }
    return os.str();
}

}  // namespace vulnkg::ingest
