#pragma once

#include "vulnkg/baselines.hpp"
#include "vulnkg/config.hpp"
#include "vulnkg/evalrank.hpp"
#include "vulnkg/fusion.hpp"
#include "vulnkg/ingest.hpp"
#include "vulnkg/kgstore.hpp"
#include "vulnkg/synthetic.hpp"
#include "vulnkg/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vulnkg::cli {

namespace fs = std::filesystem;

enum class DataSource { nvd, redhat, synthetic };
std::string_view to_string(DataSource s);
DataSource parse_data_source(std::string_view s);

struct Paths {
    fs::path nvd_fixture = "fixtures/nvd_small";
    fs::path redhat_fixture = "fixtures/redhat_small";
    fs::path cwe_fixture = "fixtures/cwe.xml";
    fs::path work = "work";
    // empty: a subdirectory of work
    fs::path cache, graph, split, checkpoints, reports;

    fs::path cache_dir() const { return cache.empty() ? work / "cache" : cache; }
    fs::path graph_dir() const { return graph.empty() ? work / "graph" : graph; }
    fs::path split_dir() const { return split.empty() ? work / "split" : split; }
    fs::path checkpoint_dir() const { return checkpoints.empty() ? work / "checkpoints" : checkpoints; }
    fs::path report_dir() const { return reports.empty() ? work / "reports" : reports; }
    friend bool operator==(const Paths&, const Paths&) = default;
};

struct SplitSettings {
    kg::SplitMode mode = kg::SplitMode::transductive;
    double valid_fraction = 0.1;
    double test_fraction = 0.1;
    std::optional<Date> train_cutoff;
    std::optional<Date> test_cutoff;
    std::vector<std::string> tasks;  // empty: the source's default task relations
    friend bool operator==(const SplitSettings&, const SplitSettings&) = default;
};

struct EvalSettings {
    bool filtered = true;
    bool both_directions = true;
    std::string task = "all";
    int threads = 1;
    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct EmbeddingSettings {
    fusion::Provider provider = fusion::Provider::local;
    std::string base_url = "https://api.openai.com";
    std::string model = "text-embedding-ada-002";
    int batch_size = 256;
    friend bool operator==(const EmbeddingSettings&, const EmbeddingSettings&) = default;
};

struct LiveSettings {
    std::string nvd_url = "https://services.nvd.nist.gov";
    std::string redhat_url = "https://access.redhat.com";
    std::string cwe_url = "https://cwe.mitre.org/data/xml/cwec_latest.xml.zip";
    std::optional<Date> since;
    std::optional<int> max_pages;
    friend bool operator==(const LiveSettings&, const LiveSettings&) = default;
};

struct RunConfig {
    DataSource source = DataSource::nvd;
    bool offline = true;
    std::uint64_t seed = 0;
    Paths paths;
    LiveSettings live;
    synth::PlantedConfig synthetic;
    SplitSettings split;
    train::TrainConfig train;
    baseline::TransEConfig transe;
    EvalSettings eval;
    EmbeddingSettings embeddings;

    /// Copies the single seed into every stochastic component.
    void propagate_seed();
    std::vector<std::string> task_relations() const;
    /// Checks values and that every input path the run needs exists.
    void validate() const;
    friend bool operator==(const RunConfig& a, const RunConfig& b);
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys anywhere are errors; `source` is required. Relative paths are taken from the
/// working directory.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig parse_config(const fs::path& path);
/// Hex digest of the normalized configuration, stamped on every output.
std::string config_checksum(const RunConfig& c);

inline constexpr std::string_view kTokenEnvHelp =
    "OPENAI_API_KEY  bearer token for the remote embedding provider (embeddings.provider = \"remote\")";

/// Runs one command line (without the program name). Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vulnkg::cli
