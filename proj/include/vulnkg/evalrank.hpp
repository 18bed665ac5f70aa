#pragma once

#include "vulnkg/gnn.hpp"
#include "vulnkg/kgstore.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace vulnkg::eval {

using gnn::Query;
using gnn::Vector;

/// Scores every entity of the ranking graph as the tail of a query; larger is better.
using Scorer = std::function<Vector(const Query&)>;

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankingResult {
    Query query;
    kg::EntityId truth = 0;
    std::vector<kg::EntityId> candidates;  // descending score
    double rank_of_truth = 0.0;            // 1-based, ties take the mean rank
    bool filtered = true;
};

/// Mean-rank position of `truth` among `candidates` under `scores`.
double tie_aware_rank(const Vector& scores, kg::EntityId truth, std::span<const kg::EntityId> candidates);

/// Entities of the query's target kind that take part in the graph, minus known trues (when filtered).
std::vector<kg::EntityId> candidate_set(const kg::KnowledgeGraph& g, const Query& query, kg::EntityId truth,
                                        const std::set<kg::EntityId>& known_true, bool filtered);

RankingResult rank_query(const Scorer& model, const kg::KnowledgeGraph& g_inference, const Query& query, kg::EntityId truth,
                         const std::set<kg::EntityId>& known_true, bool filtered = true);

double mrr(std::span<const double> ranks);
double hits_at_k(std::span<const double> ranks, int k);
/// E[1/rank] for a uniformly random rank among n candidates, and the variance of 1/rank.
double random_reciprocal_rank(std::size_t n);
double random_reciprocal_rank_variance(std::size_t n);

struct MetricsReport {
    double mrr = 0.0;
    std::map<int, double> hits;  // K in {1, 3, 10}
    std::size_t queries = 0;
    double random_mrr = 0.0;      // analytic baseline for the same candidate-set sizes
    double random_mrr_std = 0.0;  // standard deviation of that baseline's mean

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport summarize(std::span<const double> ranks, std::span<const std::size_t> candidate_counts);

enum class Task { cve_cwe, cve_cpe, all };
std::string_view to_string(Task t);
Task parse_task(std::string_view s);

struct EvalOptions {
    bool filtered = true;
    bool both_directions = true;  // false: tail queries only
    bool use_valid = false;       // rank the validation triples instead of the test triples
    int threads = 1;
};

struct QueryRecord {
    std::string task;
    std::string head;
    std::string relation;
    std::string truth;
    double rank = 0.0;
    std::size_t candidates = 0;
};

struct Evaluation {
    std::map<std::string, MetricsReport> per_task;
    std::vector<QueryRecord> records;
};

/// The inverse-augmented graph a split's test queries are ranked against.
kg::KnowledgeGraph ranking_graph(const kg::KnowledgeGraph& g, const kg::DatasetSplit& split);

/// `ranking` must come from ranking_graph(g, split). Tasks other than `all` use the CVE relations;
/// `all` covers every evaluation triple.
Evaluation evaluate_split(const Scorer& model, const kg::KnowledgeGraph& ranking, const kg::DatasetSplit& split, Task task,
                          const EvalOptions& opts = {});

std::string format_metrics(const Evaluation& e);
/// Tab-separated per-query lines followed by a summary block; `tag` (e.g. the config checksum) heads the file.
void write_evaluation(const Evaluation& e, const std::filesystem::path& path, const std::string& tag);

struct PredictionRow {
    int rank = 0;
    std::string label;
    double score = 0.0;
};

/// Ranks tail candidates for (cve, relation); relations pointing at a CVE are queried through their inverse.
std::vector<PredictionRow> predict_report(const Scorer& model, const kg::KnowledgeGraph& g_inference, const std::string& cve_id,
                                          const std::string& relation, int top_n, bool exclude_known);
std::string format_predictions(const std::vector<PredictionRow>& rows);
void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path, const std::string& tag);

/// Scorer backed by the graph model over a prepared context (logits).
Scorer model_scorer(const gnn::GraphContext& ctx, gnn::ModelParams& params);

}  // namespace vulnkg::eval
