#pragma once

#include "vulnkg/kgstore.hpp"

#include <string>
#include <vector>

namespace vulnkg::synth {

/// A vulnerability-shaped graph with a planted composition rule:
/// affects (CVE -> CPE), weakness (CPE -> CWE) and exhibits (CVE -> CWE), where exhibits is
/// affects followed by weakness up to a fraction of noisy links. CVE descriptions mention a
/// keyword of the CWE they exhibit with probability `text_signal`.
struct PlantedConfig {
    int cves = 220;
    int cpes = 60;
    int cwes = 16;
    int max_cpes_per_cve = 3;
    double noise = 0.1;
    double text_signal = 0.8;
    std::uint64_t seed = 7;
    Date start = Date{std::chrono::year{2020} / 1 / 1};
    Date end = Date{std::chrono::year{2023} / 10 / 1};
};

inline constexpr std::string_view kAffects = "affects";
inline constexpr std::string_view kWeakness = "weakness";
inline constexpr std::string_view kExhibits = "exhibits";

std::vector<kg::RelationType> planted_schema();
kg::KnowledgeGraph planted_graph(const PlantedConfig& cfg = {});
/// Date such that about `fraction` of the CVEs are published after it.
Date cutoff_for_fraction(const kg::KnowledgeGraph& g, double fraction);

}  // namespace vulnkg::synth
