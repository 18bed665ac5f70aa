#include "vulnkg/ingest.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <sstream>
#include <unordered_set>

namespace vulnkg::ingest {

namespace pt = boost::property_tree;

namespace {

std::string attr(const pt::ptree& node, const char* name) {
    return node.get<std::string>(std::string("<xmlattr>.") + name, "");
}

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool space = false;
    for (char c : trim(s)) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

void read_platforms(const pt::ptree& platforms, CweRecord& rec) {
    for (const auto& [tag, child] : platforms) {
        auto label = attr(child, "Name");
        if (label.empty()) label = attr(child, "Class");
        if (label.empty()) continue;
        if (tag == "Language") rec.languages.insert(label);
        if (tag == "Technology") rec.technologies.insert(label);
    }
}

CweRecord read_weakness(const pt::ptree& w) {
    CweRecord rec;
    const auto id = attr(w, "ID");
    if (id.empty()) throw IngestError("CWE entry without ID attribute");
    rec.cwe_id = "CWE-" + id;
    rec.name = attr(w, "Name");
    rec.description = collapse_ws(w.get<std::string>("Description", ""));
    if (auto rel = w.get_child_optional("Related_Weaknesses")) {
        for (const auto& [tag, r] : *rel) {
            if (tag != "Related_Weakness") continue;
            const auto nature = attr(r, "Nature");
            const auto target = "CWE-" + attr(r, "CWE_ID");
            if (nature == "ChildOf") rec.child_of.insert(target);
            if (nature == "PeerOf") rec.peer_of.insert(target);
            if (nature == "CanPrecede") rec.can_precede.insert(target);
        }
    }
    if (auto plat = w.get_child_optional("Applicable_Platforms")) read_platforms(*plat, rec);
    if (auto cons = w.get_child_optional("Common_Consequences")) {
        for (const auto& [tag, c] : *cons) {
            if (tag != "Consequence") continue;
            for (const auto& [field, v] : c) {
                if (field == "Scope") rec.consequences.insert(trim(v.data()));
            }
        }
    }
    if (auto lik = w.get_optional<std::string>("Likelihood_Of_Exploit")) {
        if (auto t = trim(*lik); !t.empty()) rec.exploitation_likelihood = t;
    }
    return rec;
}

template <typename Set>
std::size_t prune(Set& s, const std::unordered_set<std::string>& known, const std::string& self) {
    std::size_t dropped = 0;
    for (auto it = s.begin(); it != s.end();) {
        if (*it == self || !known.count(*it)) {
            it = s.erase(it);
            ++dropped;
        } else {
            ++it;
        }
    }
    return dropped;
}

}  // namespace

CweCatalog parse_cwe_catalog(const RawDocument& raw) {
    pt::ptree tree;
    try {
        std::istringstream in(raw.body);
        pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
    } catch (const pt::xml_parser_error& e) {
        throw IngestError("unparseable CWE catalog " + raw.origin + ": " + e.what());
    }
    const auto root = tree.get_child_optional("Weakness_Catalog");
    if (!root) throw IngestError("not a CWE catalog: " + raw.origin + " lacks <Weakness_Catalog>");

    CweCatalog cat;
    const auto date = attr(*root, "Date");
    cat.snapshot_date = date.empty() ? Date{} : parse_date(date);

    std::map<std::string, std::size_t> index;
    if (auto ws = root->get_child_optional("Weaknesses")) {
        for (const auto& [tag, w] : *ws) {
            if (tag != "Weakness") continue;
            auto rec = read_weakness(w);
            index[rec.cwe_id] = cat.records.size();
            cat.records.push_back(std::move(rec));
        }
    }
    // Categories carry Has_Member links, which become memberOf on the member side.
    std::vector<std::pair<std::string, std::string>> memberships;
    if (auto cs = root->get_child_optional("Categories")) {
        for (const auto& [tag, c] : *cs) {
            if (tag != "Category") continue;
            CweRecord rec;
            rec.cwe_id = "CWE-" + attr(c, "ID");
            rec.name = attr(c, "Name");
            rec.description = collapse_ws(c.get<std::string>("Summary", ""));
            rec.is_category = true;
            if (auto rel = c.get_child_optional("Relationships")) {
                for (const auto& [rtag, m] : *rel) {
                    if (rtag == "Has_Member") memberships.emplace_back("CWE-" + attr(m, "CWE_ID"), rec.cwe_id);
                }
            }
            index[rec.cwe_id] = cat.records.size();
            cat.records.push_back(std::move(rec));
        }
    }
    for (const auto& [member, category] : memberships) {
        if (auto it = index.find(member); it != index.end()) {
            cat.records[it->second].member_of.insert(category);
        } else {
            ++cat.dropped_edges;
        }
    }

    std::unordered_set<std::string> known;
    for (const auto& r : cat.records) known.insert(r.cwe_id);
    for (auto& r : cat.records) {
        cat.dropped_edges += prune(r.child_of, known, r.cwe_id);
        cat.dropped_edges += prune(r.peer_of, known, r.cwe_id);
        cat.dropped_edges += prune(r.can_precede, known, r.cwe_id);
        cat.dropped_edges += prune(r.member_of, known, r.cwe_id);
    }
    return cat;
}

}  // namespace vulnkg::ingest
