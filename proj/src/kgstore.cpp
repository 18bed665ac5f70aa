#include "vulnkg/kgstore.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace vulnkg::kg {

namespace {

constexpr std::array<std::string_view, 9> kKindNames{"CVE",        "CWE",         "CPE",
                                                     "Vendor",     "Component",   "Language",
                                                     "Technology", "Consequence", "ExploitationLikelihood"};

}  // namespace

std::string_view to_string(EntityKind k) { return kKindNames.at(static_cast<std::size_t>(k)); }

EntityKind parse_kind(std::string_view s) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == s) return static_cast<EntityKind>(i);
    }
    throw GraphError("unknown entity kind '" + std::string(s) + "'");
}

std::vector<RelationType> vulnerability_schema() {
    using K = EntityKind;
    return {
        {"matchingCWE", K::CVE, K::CWE},
        {"matchingCVE", K::CPE, K::CVE},
        {"hasVendor", K::CPE, K::Vendor},
        {"hasComponent", K::CPE, K::Component},
        {"childOf", K::CWE, K::CWE},
        {"peerOf", K::CWE, K::CWE},
        {"canPreceed", K::CWE, K::CWE},
        {"memberOf", K::CWE, K::CWE},
        {"hasLanguage", K::CWE, K::Language},
        {"hasTechnology", K::CWE, K::Technology},
        {"hasExploitationLikelihood", K::CWE, K::ExploitationLikelihood},
        {"hasConsequence", K::CWE, K::Consequence},
    };
}

std::vector<std::string> default_task_relations() { return {std::string(kMatchingCwe), std::string(kMatchingCve)}; }

// --- KnowledgeGraph ----------------------------------------------------------

std::size_t KnowledgeGraph::KeyHash::operator()(const std::tuple<EntityId, RelationId, EntityId>& k) const noexcept {
    const auto [h, r, t] = k;
    std::uint64_t x = static_cast<std::uint32_t>(h);
    x = x * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(r);
    x = x * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(t);
    return static_cast<std::size_t>(x ^ (x >> 29));
}

KnowledgeGraph::KnowledgeGraph(std::vector<RelationType> relations) : relations_(std::move(relations)) {
    for (std::size_t i = 0; i < relations_.size(); ++i) {
        if (!by_name_.emplace(relations_[i].name, static_cast<RelationId>(i)).second) {
            throw GraphError("duplicate relation name '" + relations_[i].name + "'");
        }
    }
}

EntityId KnowledgeGraph::add_entity(const std::string& label, EntityKind kind, const std::string& description_key) {
    if (label.empty()) throw GraphError("entity label must be nonempty");
    if (auto it = by_label_.find(label); it != by_label_.end()) {
        if (entities_[static_cast<std::size_t>(it->second)].kind != kind) {
            throw GraphError("entity '" + label + "' already exists with kind " +
                             std::string(to_string(entities_[static_cast<std::size_t>(it->second)].kind)));
        }
        return it->second;
    }
    const auto id = static_cast<EntityId>(entities_.size());
    entities_.push_back({label, kind, description_key});
    by_label_.emplace(label, id);
    out_.emplace_back();
    in_.emplace_back();
    return id;
}

bool KnowledgeGraph::add_triple(const Triple& t) {
    if (t.head < 0 || static_cast<std::size_t>(t.head) >= entities_.size() || t.tail < 0 ||
        static_cast<std::size_t>(t.tail) >= entities_.size()) {
        throw GraphError("triple endpoint outside the entity catalog");
    }
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= relations_.size()) {
        throw GraphError("triple relation outside the vocabulary");
    }
    const auto& rel = relations_[static_cast<std::size_t>(t.relation)];
    if (entity(t.head).kind != rel.head_kind || entity(t.tail).kind != rel.tail_kind) {
        throw GraphError("triple (" + entity(t.head).label + ", " + rel.name + ", " + entity(t.tail).label +
                         ") violates the relation schema");
    }
    if (!keys_.emplace(t.head, t.relation, t.tail).second) return false;
    triples_.push_back(t);
    out_[static_cast<std::size_t>(t.head)].push_back({t.relation, t.tail});
    in_[static_cast<std::size_t>(t.tail)].push_back({t.relation, t.head});
    return true;
}

void KnowledgeGraph::set_description(const std::string& key, std::string text) { descriptions_[key] = std::move(text); }

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view label) const {
    if (auto it = by_label_.find(std::string(label)); it != by_label_.end()) return it->second;
    return std::nullopt;
}

EntityId KnowledgeGraph::entity_id(std::string_view label) const {
    if (auto e = find_entity(label)) return *e;
    throw GraphError("unknown entity '" + std::string(label) + "'");
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view name) const {
    if (auto it = by_name_.find(std::string(name)); it != by_name_.end()) return it->second;
    return std::nullopt;
}

RelationId KnowledgeGraph::relation_id(std::string_view name) const {
    if (auto r = find_relation(name)) return *r;
    throw GraphError("unknown relation '" + std::string(name) + "'");
}

std::string KnowledgeGraph::description_of(EntityId e) const {
    const auto& ent = entity(e);
    if (!ent.description_key.empty()) {
        if (auto it = descriptions_.find(ent.description_key); it != descriptions_.end() && !it->second.empty()) return it->second;
    }
    return ent.label;
}

bool KnowledgeGraph::has_triple(EntityId h, RelationId r, EntityId t) const { return keys_.count({h, r, t}) > 0; }

std::vector<EntityId> KnowledgeGraph::entities_of_kind(EntityKind k) const {
    std::vector<EntityId> out;
    for (std::size_t i = 0; i < entities_.size(); ++i) {
        if (entities_[i].kind == k) out.push_back(static_cast<EntityId>(i));
    }
    return out;
}

std::vector<EntityId> KnowledgeGraph::active_entities_of_kind(EntityKind k) const {
    std::vector<EntityId> out;
    for (std::size_t i = 0; i < entities_.size(); ++i) {
        if (entities_[i].kind == k && (!out_[i].empty() || !in_[i].empty())) out.push_back(static_cast<EntityId>(i));
    }
    return out;
}

bool KnowledgeGraph::has_inverses() const {
    return std::any_of(relations_.begin(), relations_.end(), [](const RelationType& r) { return r.is_inverse; });
}

RelationId KnowledgeGraph::inverse(RelationId r) const {
    const auto inv = relation(r).inverse_of;
    if (inv < 0) throw GraphError("relation '" + relation(r).name + "' has no inverse; augment the graph first");
    return inv;
}

KnowledgeGraph KnowledgeGraph::with_triples(const std::vector<Triple>& triples) const {
    KnowledgeGraph g(relations_);
    for (const auto& e : entities_) g.add_entity(e.label, e.kind, e.description_key);
    g.descriptions_ = descriptions_;
    for (const auto& t : triples) g.add_triple(t);
    return g;
}

// --- construction ------------------------------------------------------------

std::string component_label(char part) {
    switch (part) {
        case 'a': return "component:application";
        case 'o': return "component:operating_system";
        case 'h': return "component:hardware";
    }
    throw GraphError(std::string("invalid CPE part '") + part + "'");
}

KnowledgeGraph build_graph(const std::vector<ingest::CveRecord>& cves, const ingest::CweCatalog& cwes, BuildReport* report) {
    if (cves.empty() && cwes.records.empty()) throw GraphError("build_graph: empty input");
    KnowledgeGraph g(vulnerability_schema());
    BuildReport rep;
    rep.catalog_dropped_edges = cwes.dropped_edges;
    const auto r = [&](std::string_view name) { return g.relation_id(name); };

    // Catalog knowledge is static background: it predates every temporal cutoff.
    const Date static_date{};
    std::set<std::string> catalog_ids;
    for (const auto& w : cwes.records) {
        g.add_entity(w.cwe_id, EntityKind::CWE, w.cwe_id);
        g.set_description(w.cwe_id, w.description.empty() ? w.name : w.name + ". " + w.description);
        catalog_ids.insert(w.cwe_id);
    }
    for (const auto& w : cwes.records) {
        const auto self = g.entity_id(w.cwe_id);
        auto link = [&](const std::set<std::string>& targets, std::string_view rel) {
            for (const auto& t : targets) {
                if (catalog_ids.count(t)) g.add_triple({self, r(rel), g.entity_id(t), static_date});
            }
        };
        link(w.child_of, "childOf");
        link(w.peer_of, "peerOf");
        link(w.can_precede, "canPreceed");
        link(w.member_of, "memberOf");
        auto attr = [&](const std::set<std::string>& values, std::string_view prefix, EntityKind kind, std::string_view rel) {
            for (const auto& v : values) {
                const auto e = g.add_entity(std::string(prefix) + v, kind);
                g.add_triple({self, r(rel), e, static_date});
            }
        };
        attr(w.languages, "language:", EntityKind::Language, "hasLanguage");
        attr(w.technologies, "technology:", EntityKind::Technology, "hasTechnology");
        attr(w.consequences, "consequence:", EntityKind::Consequence, "hasConsequence");
        if (w.exploitation_likelihood) {
            const auto e = g.add_entity("likelihood:" + *w.exploitation_likelihood, EntityKind::ExploitationLikelihood);
            g.add_triple({self, r("hasExploitationLikelihood"), e, static_date});
        }
    }

    // Earliest date each CPE is linked to any kept CVE; dates its vendor/component edges.
    std::map<std::string, std::pair<Date, char>> cpe_first;
    std::set<std::string> seen_cves;
    for (const auto& c : cves) {
        if (!seen_cves.insert(c.cve_id).second) throw GraphError("duplicate CVE record " + c.cve_id);
        std::vector<std::string> known_cwes;
        for (const auto& w : c.cwe_ids) {
            if (catalog_ids.count(w)) {
                known_cwes.push_back(w);
            } else {
                ++rep.dropped_cwe_edges;
            }
        }
        if (known_cwes.empty() && c.cpe_first_seen.empty()) {
            ++rep.excluded_cves;
            continue;
        }
        const Date pub = to_date(c.published);
        const auto cve = g.add_entity(c.cve_id, EntityKind::CVE, c.cve_id);
        g.set_description(c.cve_id, c.description);
        for (const auto& w : known_cwes) g.add_triple({cve, r(kMatchingCwe), g.entity_id(w), pub});
        for (const auto& [short_cpe, seen] : c.cpe_first_seen) {
            const auto name = ingest::parse_cpe_uri(short_cpe, true);
            const Date when = std::max(pub, to_date(seen));
            const auto cpe = g.add_entity(short_cpe, EntityKind::CPE);
            g.add_triple({cpe, r(kMatchingCve), cve, when});
            auto [it, inserted] = cpe_first.emplace(short_cpe, std::make_pair(when, name.part));
            if (!inserted) it->second.first = std::min(it->second.first, when);
        }
    }
    for (const auto& [short_cpe, info] : cpe_first) {
        const auto name = ingest::parse_cpe_uri(short_cpe, true);
        const auto cpe = g.entity_id(short_cpe);
        const auto vendor = g.add_entity("vendor:" + name.vendor, EntityKind::Vendor);
        const auto component = g.add_entity(component_label(info.second), EntityKind::Component);
        g.add_triple({cpe, r("hasVendor"), vendor, info.first});
        g.add_triple({cpe, r("hasComponent"), component, info.first});
    }
    if (report) *report = rep;
    return g;
}

KnowledgeGraph augment_inverses(const KnowledgeGraph& g) {
    if (g.has_inverses()) throw GraphError("augment_inverses: graph already carries inverse relations");
    const auto n = static_cast<RelationId>(g.num_relations());
    std::vector<RelationType> rels = g.relations();
    for (RelationId i = 0; i < n; ++i) {
        auto& fwd = rels[static_cast<std::size_t>(i)];
        fwd.inverse_of = i + n;
    }
    for (RelationId i = 0; i < n; ++i) {
        const auto& fwd = rels[static_cast<std::size_t>(i)];
        rels.push_back({fwd.name + "_inv", fwd.tail_kind, fwd.head_kind, true, i});
    }
    KnowledgeGraph out(std::move(rels));
    for (const auto& e : g.entities()) out.add_entity(e.label, e.kind, e.description_key);
    for (const auto& [k, v] : g.descriptions()) out.set_description(k, v);
    for (const auto& t : g.triples()) out.add_triple(t);
    for (const auto& t : g.triples()) out.add_triple({t.tail, t.relation + n, t.head, t.created});
    return out;
}

// --- splits ------------------------------------------------------------------

namespace {

std::set<RelationId> task_ids(const KnowledgeGraph& g, const std::vector<std::string>& names) {
    std::set<RelationId> out;
    for (const auto& n : names) {
        if (auto r = g.find_relation(n)) out.insert(*r);
    }
    if (out.empty()) throw GraphError("none of the task relations exist in the graph");
    return out;
}

void check_fraction(double f, const char* what) {
    if (!(f >= 0.0 && f < 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1)");
}

/// Moves candidates out of the structural graph while each endpoint keeps a triple there.
void carve(std::vector<Triple>& candidates, std::vector<std::size_t>& degree, std::size_t n_test, std::size_t n_valid,
           std::vector<Triple>& test, std::vector<Triple>& valid, std::vector<Triple>& kept) {
    for (const auto& t : candidates) {
        const auto h = static_cast<std::size_t>(t.head);
        const auto tl = static_cast<std::size_t>(t.tail);
        const bool room = test.size() < n_test || valid.size() < n_valid;
        if (room && degree[h] > 1 && degree[tl] > 1) {
            --degree[h];
            --degree[tl];
            (test.size() < n_test ? test : valid).push_back(t);
        } else {
            kept.push_back(t);
        }
    }
}

}  // namespace

DatasetSplit split_transductive(const KnowledgeGraph& g, double valid_fraction, double test_fraction, std::uint64_t seed,
                                const std::vector<std::string>& task_relations) {
    check_fraction(valid_fraction, "valid_fraction");
    check_fraction(test_fraction, "test_fraction");
    if (valid_fraction + test_fraction >= 1.0) throw std::invalid_argument("valid_fraction + test_fraction must be < 1");
    if (valid_fraction <= 0.0 || test_fraction <= 0.0) throw std::invalid_argument("split fractions must be positive");
    if (g.has_inverses()) throw GraphError("split the forward graph; inverses are added per split");
    const auto tasks = task_ids(g, task_relations);

    DatasetSplit s;
    s.mode = SplitMode::transductive;
    s.seed = seed;
    std::vector<Triple> eligible;
    for (const auto& t : g.triples()) (tasks.count(t.relation) ? eligible : s.train).push_back(t);
    Rng rng(seed);
    rng.shuffle(eligible);

    std::vector<std::size_t> degree(g.num_entities(), 0);
    for (const auto& t : g.triples()) {
        ++degree[static_cast<std::size_t>(t.head)];
        ++degree[static_cast<std::size_t>(t.tail)];
    }
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(eligible.size())));
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(eligible.size())));
    carve(eligible, degree, n_test, n_valid, s.test, s.valid, s.train);
    if (s.test.size() < n_test || s.valid.size() < n_valid) {
        s.warnings.push_back("entity coverage limits the split to " + std::to_string(s.valid.size()) + " valid / " +
                             std::to_string(s.test.size()) + " test triples (requested " + std::to_string(n_valid) + " / " +
                             std::to_string(n_test) + ")");
    }
    std::sort(s.train.begin(), s.train.end());
    return s;
}

DatasetSplit split_inductive(const KnowledgeGraph& g, Date train_cutoff, Date test_cutoff, double valid_fraction,
                             double test_fraction, std::uint64_t seed, const std::vector<std::string>& task_relations) {
    if (!(train_cutoff < test_cutoff)) throw std::invalid_argument("train_cutoff must precede test_cutoff");
    check_fraction(valid_fraction, "valid_fraction");
    check_fraction(test_fraction, "test_fraction");
    if (valid_fraction + test_fraction >= 1.0) throw std::invalid_argument("valid_fraction + test_fraction must be < 1");
    if (g.has_inverses()) throw GraphError("split the forward graph; inverses are added per split");
    const auto tasks = task_ids(g, task_relations);

    DatasetSplit s;
    s.mode = SplitMode::inductive;
    s.train_cutoff = train_cutoff;
    s.test_cutoff = test_cutoff;
    s.seed = seed;
    std::vector<Triple> extension, eligible;
    for (const auto& t : g.triples()) {
        if (t.created <= train_cutoff) {
            s.train.push_back(t);
        } else if (t.created <= test_cutoff) {
            (tasks.count(t.relation) ? eligible : extension).push_back(t);
        }
    }
    if (extension.empty() && eligible.empty()) {
        throw GraphError("no triples dated after the training cutoff " + format_date(train_cutoff));
    }
    Rng rng(seed);
    rng.shuffle(eligible);
    std::vector<std::size_t> degree(g.num_entities(), 0);
    for (const auto* part : {&s.train, &extension, &eligible}) {
        for (const auto& t : *part) {
            ++degree[static_cast<std::size_t>(t.head)];
            ++degree[static_cast<std::size_t>(t.tail)];
        }
    }
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(eligible.size())));
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(eligible.size())));
    carve(eligible, degree, n_test, n_valid, s.test, s.valid, extension);
    if (s.test.size() < n_test || s.valid.size() < n_valid) {
        s.warnings.push_back("entity coverage limits the split to " + std::to_string(s.valid.size()) + " valid / " +
                             std::to_string(s.test.size()) + " test triples");
    }
    std::vector<Triple> inference = s.train;
    inference.insert(inference.end(), extension.begin(), extension.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(inference.begin(), inference.end());
    s.inference = std::move(inference);
    return s;
}

// --- statistics --------------------------------------------------------------

GraphStats graph_stats(const KnowledgeGraph& g) {
    GraphStats s;
    s.entities = g.num_entities();
    s.triples = g.triples().size();
    for (auto k : kAllKinds) s.per_kind[k] = 0;
    for (const auto& r : g.relations()) s.per_relation[r.name] = 0;
    for (const auto& e : g.entities()) ++s.per_kind[e.kind];
    for (const auto& t : g.triples()) {
        ++s.per_relation[g.relation(t.relation).name];
        ++s.per_year[year_of(t.created)];
    }
    return s;
}

std::string format_stats(const GraphStats& s) {
    std::ostringstream os;
    os << "entities\t" << s.entities << "\ntriples\t" << s.triples << "\n";
    for (const auto& [k, n] : s.per_kind) os << "kind\t" << to_string(k) << '\t' << n << '\n';
    for (const auto& [r, n] : s.per_relation) os << "relation\t" << r << '\t' << n << '\n';
    for (const auto& [y, n] : s.per_year) os << "year\t" << y << '\t' << n << '\n';
    return os.str();
}

// --- persistence -------------------------------------------------------------

namespace {

constexpr std::string_view kFormatVersion = "1";

std::string escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out += s[i];
            continue;
        }
        switch (s[++i]) {
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            default: out += s[i];
        }
    }
    return out;
}

struct GraphFiles {
    std::string entities, relations, triples, descriptions;
};

GraphFiles serialize(const KnowledgeGraph& g) {
    GraphFiles f;
    std::ostringstream e, r, t, d;
    e << "id\tkind\tlabel\tdescription_key\n";
    for (std::size_t i = 0; i < g.num_entities(); ++i) {
        const auto& ent = g.entities()[i];
        e << i << '\t' << to_string(ent.kind) << '\t' << escape(ent.label) << '\t' << escape(ent.description_key) << '\n';
    }
    r << "id\tname\thead_kind\ttail_kind\tinverse_of\n";
    for (std::size_t i = 0; i < g.num_relations(); ++i) {
        const auto& rel = g.relations()[i];
        r << i << '\t' << escape(rel.name) << '\t' << to_string(rel.head_kind) << '\t' << to_string(rel.tail_kind) << '\t'
          << (rel.inverse_of < 0 ? std::string("-") : g.relation(rel.inverse_of).name) << '\n';
    }
    t << "head\trelation\ttail\tcreated\n";
    for (const auto& tr : g.triples()) {
        t << tr.head << '\t' << escape(g.relation(tr.relation).name) << '\t' << tr.tail << '\t' << format_date(tr.created) << '\n';
    }
    d << "key\ttext\n";
    for (const auto& [k, v] : g.descriptions()) d << escape(k) << '\t' << escape(v) << '\n';
    return {e.str(), r.str(), t.str(), d.str()};
}

std::string checksum_of(const GraphFiles& f) {
    return crc32_hex(f.entities + '\x1f' + f.relations + '\x1f' + f.triples + '\x1f' + f.descriptions);
}

std::vector<std::vector<std::string>> rows(const std::string& text, std::size_t columns, const std::string& file) {
    std::vector<std::vector<std::string>> out;
    auto lines = split(text, '\n');
    if (lines.empty()) throw GraphError(file + ": empty file");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto cols = split(lines[i], '\t');
        if (cols.size() != columns) throw GraphError(file + ":" + std::to_string(i + 1) + ": expected " + std::to_string(columns) + " columns");
        out.push_back(std::move(cols));
    }
    return out;
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw GraphError("missing manifest " + p.string());
    std::map<std::string, std::string> m;
    for (const auto& line : split(read_file(p), '\n')) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw GraphError("malformed manifest line '" + line + "'");
        m[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return m;
}

const std::string& need(const std::map<std::string, std::string>& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw GraphError("manifest lacks '" + key + "'");
    return it->second;
}

EntityId parse_id(const std::string& s, std::size_t bound) {
    std::size_t pos = 0;
    long v = -1;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
    }
    if (pos != s.size() || v < 0 || static_cast<std::size_t>(v) >= bound) throw GraphError("bad entity id '" + s + "'");
    return static_cast<EntityId>(v);
}

std::string triple_lines(const KnowledgeGraph& g, const std::vector<Triple>& ts) {
    std::ostringstream os;
    os << "head\trelation\ttail\tcreated\n";
    for (const auto& t : ts) os << t.head << '\t' << g.relation(t.relation).name << '\t' << t.tail << '\t' << format_date(t.created) << '\n';
    return os.str();
}

std::vector<Triple> parse_triples(const KnowledgeGraph& g, const std::string& text, const std::string& file) {
    std::vector<Triple> out;
    for (const auto& c : rows(text, 4, file)) {
        out.push_back({parse_id(c[0], g.num_entities()), g.relation_id(unescape(c[1])), parse_id(c[2], g.num_entities()), parse_date(c[3])});
    }
    return out;
}

}  // namespace

std::string graph_checksum(const KnowledgeGraph& g) { return checksum_of(serialize(g)); }

void save_graph(const KnowledgeGraph& g, const std::filesystem::path& dir) {
    const auto f = serialize(g);
    write_file(dir / "entities.tsv", f.entities);
    write_file(dir / "relations.tsv", f.relations);
    write_file(dir / "triples.tsv", f.triples);
    write_file(dir / "descriptions.tsv", f.descriptions);
    std::ostringstream m;
    m << "format_version\t" << kFormatVersion << "\nentities\t" << g.num_entities() << "\nrelations\t" << g.num_relations()
      << "\ntriples\t" << g.triples().size() << "\nchecksum\t" << checksum_of(f) << '\n';
    write_file(dir / "manifest", m.str());
}

KnowledgeGraph load_graph(const std::filesystem::path& dir) {
    const auto m = read_manifest(dir / "manifest");
    if (need(m, "format_version") != kFormatVersion) {
        throw GraphError("graph format version " + need(m, "format_version") + " is not supported (expected " + std::string(kFormatVersion) + ")");
    }
    GraphFiles f;
    for (auto [name, slot] : {std::pair{"entities.tsv", &f.entities}, {"relations.tsv", &f.relations}, {"triples.tsv", &f.triples},
                              {"descriptions.tsv", &f.descriptions}}) {
        if (!std::filesystem::exists(dir / name)) throw GraphError("missing graph file " + (dir / name).string());
        *slot = read_file(dir / name);
    }
    if (checksum_of(f) != need(m, "checksum")) throw GraphError("graph checksum mismatch in " + dir.string());

    std::vector<RelationType> rels;
    std::vector<std::string> inverse_names;
    for (const auto& c : rows(f.relations, 5, "relations.tsv")) {
        rels.push_back({unescape(c[1]), parse_kind(c[2]), parse_kind(c[3]), false, -1});
        inverse_names.push_back(c[4]);
    }
    for (std::size_t i = 0; i < rels.size(); ++i) {
        if (inverse_names[i] == "-") continue;
        auto it = std::find_if(rels.begin(), rels.end(), [&](const RelationType& r) { return r.name == unescape(inverse_names[i]); });
        if (it == rels.end()) throw GraphError("relations.tsv: unknown inverse '" + inverse_names[i] + "'");
        rels[i].inverse_of = static_cast<RelationId>(it - rels.begin());
        // the later-declared partner is the inverse
        rels[i].is_inverse = rels[i].inverse_of < static_cast<RelationId>(i);
    }
    KnowledgeGraph g(std::move(rels));
    for (const auto& c : rows(f.entities, 4, "entities.tsv")) {
        const auto id = g.add_entity(unescape(c[2]), parse_kind(c[1]), unescape(c[3]));
        if (std::to_string(id) != c[0]) throw GraphError("entities.tsv: ids must be dense and ordered");
    }
    for (const auto& c : rows(f.descriptions, 2, "descriptions.tsv")) g.set_description(unescape(c[0]), unescape(c[1]));
    for (const auto& t : parse_triples(g, f.triples, "triples.tsv")) {
        if (!g.add_triple(t)) throw GraphError("triples.tsv: duplicate triple");
    }
    if (std::to_string(g.num_entities()) != need(m, "entities") || std::to_string(g.triples().size()) != need(m, "triples")) {
        throw GraphError("graph counts disagree with the manifest");
    }
    return g;
}

void save_split(const DatasetSplit& s, const KnowledgeGraph& g, const std::filesystem::path& dir) {
    std::ostringstream m;
    m << "format_version\t" << kFormatVersion << "\nmode\t" << (s.mode == SplitMode::transductive ? "transductive" : "inductive")
      << "\ngraph_checksum\t" << graph_checksum(g) << "\ntrain\t" << s.train.size() << "\nvalid\t" << s.valid.size() << "\ntest\t"
      << s.test.size() << '\n';
    if (s.seed) m << "seed\t" << *s.seed << '\n';
    if (s.train_cutoff) m << "train_cutoff\t" << format_date(*s.train_cutoff) << '\n';
    if (s.test_cutoff) m << "test_cutoff\t" << format_date(*s.test_cutoff) << '\n';
    if (s.inference) m << "inference\t" << s.inference->size() << '\n';
    write_file(dir / "train.tsv", triple_lines(g, s.train));
    write_file(dir / "valid.tsv", triple_lines(g, s.valid));
    write_file(dir / "test.tsv", triple_lines(g, s.test));
    if (s.inference) write_file(dir / "inference.tsv", triple_lines(g, *s.inference));
    write_file(dir / "manifest", m.str());
}

DatasetSplit load_split(const KnowledgeGraph& g, const std::filesystem::path& dir) {
    const auto m = read_manifest(dir / "manifest");
    if (need(m, "format_version") != kFormatVersion) throw GraphError("unsupported split format version");
    if (need(m, "graph_checksum") != graph_checksum(g)) throw GraphError("split in " + dir.string() + " belongs to a different graph");
    DatasetSplit s;
    s.mode = need(m, "mode") == "inductive" ? SplitMode::inductive : SplitMode::transductive;
    s.train = parse_triples(g, read_file(dir / "train.tsv"), "train.tsv");
    s.valid = parse_triples(g, read_file(dir / "valid.tsv"), "valid.tsv");
    s.test = parse_triples(g, read_file(dir / "test.tsv"), "test.tsv");
    if (m.count("seed")) s.seed = std::stoull(m.at("seed"));
    if (m.count("train_cutoff")) s.train_cutoff = parse_date(m.at("train_cutoff"));
    if (m.count("test_cutoff")) s.test_cutoff = parse_date(m.at("test_cutoff"));
    if (m.count("inference")) s.inference = parse_triples(g, read_file(dir / "inference.tsv"), "inference.tsv");
    if (std::to_string(s.train.size()) != need(m, "train") || std::to_string(s.test.size()) != need(m, "test")) {
        throw GraphError("split counts disagree with the manifest");
    }
    return s;
}

// --- analyses ----------------------------------------------------------------

std::vector<DelayRow> cpe_delay_report(const std::vector<ingest::CveRecord>& cves, const std::vector<int>& windows_days) {
    std::map<int, DelayRow> by_year;
    std::map<int, std::vector<std::size_t>> hits;
    for (const auto& c : cves) {
        const int y = year_of(to_date(c.published));
        auto& row = by_year[y];
        row.year = y;
        ++row.total;
        auto& h = hits[y];
        h.resize(windows_days.size(), 0);
        std::chrono::seconds latest{0};
        for (const auto& [k, t] : c.cpe_first_seen) latest = std::max(latest, t - c.published);
        for (std::size_t w = 0; w < windows_days.size(); ++w) {
            if (latest > std::chrono::hours(24) * windows_days[w]) ++h[w];
        }
    }
    std::vector<DelayRow> out;
    for (auto& [y, row] : by_year) {
        for (auto n : hits[y]) row.percent.push_back(100.0 * static_cast<double>(n) / static_cast<double>(row.total));
        out.push_back(row);
    }
    return out;
}

std::string format_delay_report(const std::vector<DelayRow>& rows, const std::vector<int>& windows_days) {
    std::ostringstream os;
    os << "year\ttotal";
    for (int w : windows_days) os << '\t' << w << "d";
    os << '\n';
    char buf[32];
    for (const auto& r : rows) {
        os << r.year << '\t' << r.total;
        for (double p : r.percent) {
            std::snprintf(buf, sizeof buf, "%.2f%%", p);
            os << '\t' << buf;
        }
        os << '\n';
    }
    return os.str();
}

MissingCweReport missing_cwe_report(const KnowledgeGraph& g, const std::vector<ingest::CveRecord>& pre_filter_cves) {
    MissingCweReport rep;
    rep.cves = pre_filter_cves.size();
    for (const auto& c : pre_filter_cves) rep.missing += c.cwe_ids.empty();
    rep.fraction = rep.cves ? static_cast<double>(rep.missing) / static_cast<double>(rep.cves) : 0.0;
    const auto cwe_rel = g.find_relation(kMatchingCwe);
    std::size_t in_graph = 0, lacking = 0;
    for (auto e : g.entities_of_kind(EntityKind::CVE)) {
        ++in_graph;
        const auto& out = g.out_edges(e);
        lacking += std::none_of(out.begin(), out.end(), [&](const Edge& ed) { return cwe_rel && ed.relation == *cwe_rel; });
    }
    rep.fraction_in_graph = in_graph ? static_cast<double>(lacking) / static_cast<double>(in_graph) : 0.0;
    return rep;
}

}  // namespace vulnkg::kg
