#pragma once

#include "vulnkg/ingest.hpp"
#include "vulnkg/util.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vulnkg::kg {

enum class EntityKind : std::uint8_t {
    CVE,
    CWE,
    CPE,
    Vendor,
    Component,
    Language,
    Technology,
    Consequence,
    ExploitationLikelihood,
};
inline constexpr std::array<EntityKind, 9> kAllKinds{EntityKind::CVE,        EntityKind::CWE,         EntityKind::CPE,
                                                     EntityKind::Vendor,     EntityKind::Component,   EntityKind::Language,
                                                     EntityKind::Technology, EntityKind::Consequence, EntityKind::ExploitationLikelihood};

std::string_view to_string(EntityKind k);
EntityKind parse_kind(std::string_view s);

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RelationType {
    std::string name;
    EntityKind head_kind = EntityKind::CVE;
    EntityKind tail_kind = EntityKind::CVE;
    bool is_inverse = false;
    RelationId inverse_of = -1;  // partner id once inverses exist

    friend bool operator==(const RelationType&, const RelationType&) = default;
};

/// The twelve forward relations of the vulnerability graph.
std::vector<RelationType> vulnerability_schema();
inline constexpr std::string_view kMatchingCwe = "matchingCWE";
inline constexpr std::string_view kMatchingCve = "matchingCVE";

struct Entity {
    std::string label;
    EntityKind kind = EntityKind::CVE;
    std::string description_key;  // empty: the label doubles as description

    friend bool operator==(const Entity&, const Entity&) = default;
};

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;
    Date created{};

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
    RelationId relation;
    EntityId other;
};

class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    explicit KnowledgeGraph(std::vector<RelationType> relations);

    /// Returns the existing id when the label is already present (kinds must agree).
    EntityId add_entity(const std::string& label, EntityKind kind, const std::string& description_key = "");
    /// Returns false for a duplicate (h, r, t); endpoint kinds must match the relation.
    bool add_triple(const Triple& t);
    void set_description(const std::string& key, std::string text);

    std::optional<EntityId> find_entity(std::string_view label) const;
    EntityId entity_id(std::string_view label) const;
    std::optional<RelationId> find_relation(std::string_view name) const;
    RelationId relation_id(std::string_view name) const;

    const std::vector<Entity>& entities() const { return entities_; }
    const std::vector<RelationType>& relations() const { return relations_; }
    const std::vector<Triple>& triples() const { return triples_; }
    const std::map<std::string, std::string>& descriptions() const { return descriptions_; }
    const Entity& entity(EntityId e) const { return entities_.at(static_cast<std::size_t>(e)); }
    const RelationType& relation(RelationId r) const { return relations_.at(static_cast<std::size_t>(r)); }
    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return relations_.size(); }

    /// Description text, or the label for entities without one.
    std::string description_of(EntityId e) const;

    bool has_triple(EntityId h, RelationId r, EntityId t) const;
    const std::vector<Edge>& out_edges(EntityId e) const { return out_.at(static_cast<std::size_t>(e)); }
    const std::vector<Edge>& in_edges(EntityId e) const { return in_.at(static_cast<std::size_t>(e)); }
    std::size_t degree(EntityId e) const { return out_edges(e).size() + in_edges(e).size(); }
    std::vector<EntityId> entities_of_kind(EntityKind k) const;
    /// Entities of the kind that take part in at least one triple.
    std::vector<EntityId> active_entities_of_kind(EntityKind k) const;
    bool has_inverses() const;
    /// Inverse partner of r (requires augmented graph).
    RelationId inverse(RelationId r) const;

    /// Same catalog and vocabulary, different triple set.
    KnowledgeGraph with_triples(const std::vector<Triple>& triples) const;

    friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
        return a.entities_ == b.entities_ && a.relations_ == b.relations_ && a.triples_ == b.triples_ &&
               a.descriptions_ == b.descriptions_;
    }

private:
    struct KeyHash {
        std::size_t operator()(const std::tuple<EntityId, RelationId, EntityId>& k) const noexcept;
    };
    std::vector<Entity> entities_;
    std::vector<RelationType> relations_;
    std::vector<Triple> triples_;
    std::map<std::string, std::string> descriptions_;
    std::unordered_map<std::string, EntityId> by_label_;
    std::unordered_map<std::string, RelationId> by_name_;
    std::unordered_set<std::tuple<EntityId, RelationId, EntityId>, KeyHash> keys_;
    std::vector<std::vector<Edge>> out_;
    std::vector<std::vector<Edge>> in_;
};

struct BuildReport {
    std::size_t excluded_cves = 0;      // neither a CWE nor a CPE link
    std::size_t dropped_cwe_edges = 0;  // CVE weakness not present in the catalog
    std::size_t catalog_dropped_edges = 0;
};

/// Component entity label for a CPE part letter.
std::string component_label(char part);

KnowledgeGraph build_graph(const std::vector<ingest::CveRecord>& cves, const ingest::CweCatalog& cwes,
                           BuildReport* report = nullptr);
KnowledgeGraph augment_inverses(const KnowledgeGraph& g);

enum class SplitMode { transductive, inductive };

struct DatasetSplit {
    SplitMode mode = SplitMode::transductive;
    std::vector<Triple> train;
    std::vector<Triple> valid;
    std::vector<Triple> test;
    std::optional<std::vector<Triple>> inference;
    std::optional<Date> train_cutoff;
    std::optional<Date> test_cutoff;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> warnings;

    /// Triples the model may see as graph structure when ranking test queries.
    const std::vector<Triple>& ranking_graph() const { return inference ? *inference : train; }
};

std::vector<std::string> default_task_relations();

DatasetSplit split_transductive(const KnowledgeGraph& g, double valid_fraction, double test_fraction, std::uint64_t seed,
                                const std::vector<std::string>& task_relations = default_task_relations());
DatasetSplit split_inductive(const KnowledgeGraph& g, Date train_cutoff, Date test_cutoff, double valid_fraction,
                             double test_fraction, std::uint64_t seed,
                             const std::vector<std::string>& task_relations = default_task_relations());

struct GraphStats {
    std::size_t entities = 0;
    std::size_t triples = 0;
    std::map<EntityKind, std::size_t> per_kind;
    std::map<std::string, std::size_t> per_relation;
    std::map<int, std::size_t> per_year;

    friend bool operator==(const GraphStats&, const GraphStats&) = default;
};
GraphStats graph_stats(const KnowledgeGraph& g);
std::string format_stats(const GraphStats& s);

/// Directory holding entities.tsv, relations.tsv, triples.tsv, descriptions.tsv and manifest.
void save_graph(const KnowledgeGraph& g, const std::filesystem::path& dir);
KnowledgeGraph load_graph(const std::filesystem::path& dir);
/// Checksum recorded in the manifest written by save_graph.
std::string graph_checksum(const KnowledgeGraph& g);

void save_split(const DatasetSplit& s, const KnowledgeGraph& g, const std::filesystem::path& dir);
DatasetSplit load_split(const KnowledgeGraph& g, const std::filesystem::path& dir);

struct DelayRow {
    int year = 0;
    std::size_t total = 0;
    std::vector<double> percent;  // one per window
};
std::vector<DelayRow> cpe_delay_report(const std::vector<ingest::CveRecord>& cves, const std::vector<int>& windows_days);
std::string format_delay_report(const std::vector<DelayRow>& rows, const std::vector<int>& windows_days);

struct MissingCweReport {
    std::size_t cves = 0;
    std::size_t missing = 0;
    double fraction = 0.0;            // over the unfiltered population
    double fraction_in_graph = 0.0;   // CVE entities of the graph without matchingCWE
};
MissingCweReport missing_cwe_report(const KnowledgeGraph& g, const std::vector<ingest::CveRecord>& pre_filter_cves);

}  // namespace vulnkg::kg
