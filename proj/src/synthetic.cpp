#include "vulnkg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace vulnkg::synth {

namespace {

constexpr std::array<std::string_view, 24> kKeywords{
    "overflow", "injection", "traversal", "deserialization", "race",      "leak",     "forgery",    "bypass",
    "exhaustion", "underflow", "redirect", "escalation",    "spoofing",  "hijack",   "tampering",  "disclosure",
    "truncation", "reentrancy", "poisoning", "smuggling",   "downgrade", "replay",   "confusion",  "fixation"};

constexpr std::array<std::string_view, 8> kFiller{"remote attackers", "a crafted request", "local users", "the parser",
                                                  "an authenticated user", "the web interface", "a malformed file", "the service"};

std::string label(const char* fmt, int i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, i);
    return buf;
}

}  // namespace

std::vector<kg::RelationType> planted_schema() {
    return {{std::string(kAffects), kg::EntityKind::CVE, kg::EntityKind::CPE},
            {std::string(kWeakness), kg::EntityKind::CPE, kg::EntityKind::CWE},
            {std::string(kExhibits), kg::EntityKind::CVE, kg::EntityKind::CWE}};
}

kg::KnowledgeGraph planted_graph(const PlantedConfig& cfg) {
    if (cfg.cves < 1 || cfg.cpes < 1 || cfg.cwes < 1 || cfg.max_cpes_per_cve < 1) throw std::invalid_argument("planted graph sizes must be positive");
    if (cfg.cwes > static_cast<int>(kKeywords.size())) throw std::invalid_argument("at most 24 CWEs are supported");
    if (!(cfg.start < cfg.end)) throw std::invalid_argument("planted graph date range is empty");
    Rng rng(cfg.seed);
    kg::KnowledgeGraph g(planted_schema());
    const auto affects = g.relation_id(kAffects);
    const auto weakness = g.relation_id(kWeakness);
    const auto exhibits = g.relation_id(kExhibits);

    std::vector<kg::EntityId> cwe(static_cast<std::size_t>(cfg.cwes)), cpe(static_cast<std::size_t>(cfg.cpes));
    for (int k = 0; k < cfg.cwes; ++k) {
        const auto name = label("CWE-%d", 9000 + k);
        cwe[static_cast<std::size_t>(k)] = g.add_entity(name, kg::EntityKind::CWE, name);
        g.set_description(name, "Weakness class: improper handling leading to " + std::string(kKeywords[static_cast<std::size_t>(k)]));
    }
    std::vector<int> cwe_of(static_cast<std::size_t>(cfg.cpes));
    for (int j = 0; j < cfg.cpes; ++j) {
        cpe[static_cast<std::size_t>(j)] = g.add_entity(label("cpe:2.3:a:vendor%02d:", j % 10) + label("product%03d", j), kg::EntityKind::CPE);
        // the first cwes products cover every CWE once
        cwe_of[static_cast<std::size_t>(j)] = j < cfg.cwes ? j : static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.cwes)));
        g.add_triple({cpe[static_cast<std::size_t>(j)], weakness, cwe[static_cast<std::size_t>(cwe_of[static_cast<std::size_t>(j)])], Date{}});
    }

    const auto span_days = (cfg.end - cfg.start).count();
    for (int i = 0; i < cfg.cves; ++i) {
        const auto name = label("CVE-2099-%05d", i);
        const auto id = g.add_entity(name, kg::EntityKind::CVE, name);
        const Date when = cfg.start + std::chrono::days(static_cast<long>(rng.below(static_cast<std::uint64_t>(span_days))));
        const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_cpes_per_cve)));
        // products cluster by vendor: a CVE mostly hits several products of one vendor
        const int vendors = std::min(10, cfg.cpes);
        const int vendor = static_cast<int>(rng.below(static_cast<std::uint64_t>(vendors)));
        const int per_vendor = (cfg.cpes - vendor + vendors - 1) / vendors;
        std::set<int> products;
        while (static_cast<int>(products.size()) < std::min(n, per_vendor)) {
            const int j = rng.uniform() < cfg.noise ? static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.cpes)))
                                                    : vendor + vendors * static_cast<int>(rng.below(static_cast<std::uint64_t>(per_vendor)));
            products.insert(j);
        }
        std::set<int> weaknesses;
        for (int j : products) {
            g.add_triple({id, affects, cpe[static_cast<std::size_t>(j)], when});
            int k = cwe_of[static_cast<std::size_t>(j)];
            if (rng.uniform() < cfg.noise) k = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.cwes)));
            weaknesses.insert(k);
        }
        for (int k : weaknesses) g.add_triple({id, exhibits, cwe[static_cast<std::size_t>(k)], when});

        const int hint = rng.uniform() < cfg.text_signal ? *weaknesses.begin() : static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.cwes)));
        const auto& who = kFiller[rng.below(kFiller.size())];
        g.set_description(name, label("A flaw in product%03d allows ", *products.begin()) + std::string(who) + " to trigger " +
                                    std::string(kKeywords[static_cast<std::size_t>(hint)]) + ".");
    }
    return g;
}

Date cutoff_for_fraction(const kg::KnowledgeGraph& g, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("fraction must lie in (0, 1)");
    std::map<kg::EntityId, Date> first;
    for (const auto& t : g.triples()) {
        if (g.entity(t.head).kind != kg::EntityKind::CVE) continue;
        auto [it, fresh] = first.emplace(t.head, t.created);
        if (!fresh) it->second = std::min(it->second, t.created);
    }
    std::vector<Date> published;
    for (const auto& [e, d] : first) published.push_back(d);
    if (published.empty()) throw std::invalid_argument("graph has no dated CVEs");
    std::sort(published.begin(), published.end());
    const auto idx = static_cast<std::size_t>(std::floor((1.0 - fraction) * static_cast<double>(published.size())));
    return published[std::min(idx, published.size() - 1)] - std::chrono::days(1);
}

}  // namespace vulnkg::synth
