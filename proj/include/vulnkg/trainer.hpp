#pragma once

#include "vulnkg/config.hpp"
#include "vulnkg/gnn.hpp"
#include "vulnkg/kgstore.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace vulnkg::gnn {
void to_json(nlohmann::json& j, const ModelConfig& c);
/// Strict: unknown keys are rejected, missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);
}  // namespace vulnkg::gnn

namespace vulnkg::train {

using gnn::Matrix;
using gnn::ModelParams;

struct TrainConfig {
    double learning_rate = 5e-4;
    int negatives = 64;
    int epochs = 10;
    int batches_per_epoch = 0;  // 0: one pass over all training queries
    int batch_size = 64;
    std::uint64_t seed = 0;
    bool inverse_augmentation = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int threads = 1;
    bool remove_easy_edges = true;
    /// Relations whose triples are training positives; empty means every forward relation.
    std::vector<std::string> targets;
    gnn::ModelConfig model;  // model.fusion is the fusion switch

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Strict: unknown keys are rejected, missing keys keep their defaults.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// --- negatives and loss --------------------------------------------------------

/// Draws corrupted tails of the same kind as the true tail, never a known true triple.
class NegativeSampler {
public:
    explicit NegativeSampler(const kg::KnowledgeGraph& g);
    explicit NegativeSampler(kg::KnowledgeGraph&&) = delete;
    /// With fewer eligible candidates than n the draws repeat and `warning` is set.
    std::vector<kg::Triple> sample(const kg::Triple& positive, int n, Rng& rng, std::string* warning = nullptr) const;

private:
    const kg::KnowledgeGraph& g_;
    std::unordered_map<int, std::vector<kg::EntityId>> pool_;
};

std::vector<kg::Triple> sample_negatives(const kg::Triple& positive, int n, const kg::KnowledgeGraph& g, Rng& rng);

inline constexpr double kLogFloor = 1e-12;

double bce_loss(double p_pos, std::span<const double> p_negs);
/// Same loss from logits: -log p(pos) - mean log(1 - p(neg)), clamped at kLogFloor.
num::Tensor bce_loss(const num::Tensor& pos_logit, const num::Tensor& neg_logits);

class Adam {
public:
    Adam(std::vector<num::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    long steps() const { return t_; }

private:
    std::vector<num::Parameter*> params_;
    std::vector<Matrix> m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

// --- checkpoints ---------------------------------------------------------------

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container: header (version, config text, graph checksum, epoch), named
/// blocks of doubles, CRC32 trailer.
struct Container {
    std::string config;
    std::string graph_checksum;
    std::uint32_t epoch = 0;
    std::vector<std::pair<std::string, Matrix>> blocks;

    const Matrix& block(std::string_view name) const;
};
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

struct Checkpoint {
    ModelParams params;
    TrainConfig config;
    std::string graph_checksum;
    int epoch = 0;
    std::vector<double> loss_log;
    std::optional<double> valid_mrr;
};

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
/// Refuses a checkpoint made for another graph unless `force`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_graph_checksum = std::nullopt,
                           bool force = false);

// --- training ------------------------------------------------------------------

struct TrainQuery {
    gnn::Query query;
    kg::EntityId truth = 0;
    kg::Triple positive;  // the stored triple behind the query
};

/// Tail queries for every target triple, plus head queries through the inverse relation when present.
std::vector<TrainQuery> training_queries(const kg::KnowledgeGraph& g, const std::vector<std::string>& targets);

class Trainer {
public:
    /// `text` holds one row per entity of g (ignored when fusion is off).
    Trainer(const kg::KnowledgeGraph& g, TrainConfig cfg, Matrix text = {});
    Trainer(kg::KnowledgeGraph&&, TrainConfig, Matrix = {}) = delete;  // keeps a reference to the graph

    /// One optimization step on the batch; returns the mean loss. Gradients stay on the parameters.
    double step(std::span<const TrainQuery> batch);
    /// Mean batch loss over one epoch.
    double run_epoch();

    ModelParams& params() { return params_; }
    const std::vector<TrainQuery>& queries() const { return queries_; }
    const gnn::GraphContext& context() const { return ctx_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    double query_loss(const TrainQuery& tq, const std::vector<kg::Triple>& negs, const Matrix* projection, const Matrix& r_q,
                      double weight, num::Tape& tape, Matrix& r_grad, Matrix& p_grad);

    const kg::KnowledgeGraph& g_;
    TrainConfig cfg_;
    gnn::GraphContext ctx_;
    ModelParams params_;
    std::vector<TrainQuery> queries_;
    NegativeSampler sampler_;
    Rng rng_;
    Adam adam_;
    std::vector<std::string> warnings_;
};

struct TrainOptions {
    std::filesystem::path checkpoint_dir;  // best.ckpt, last.ckpt and loss_log.tsv; empty: nothing written
    std::function<double(ModelParams&)> validate;  // returns validation MRR
    std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainResult {
    Checkpoint last;
    std::vector<double> loss_log;
    std::optional<double> best_valid_mrr;
    int best_epoch = -1;
    bool diverged = false;
};

TrainResult train(const kg::KnowledgeGraph& g_train, const TrainConfig& cfg, const Matrix& text = {}, const TrainOptions& opts = {});

struct Grid {
    std::vector<double> learning_rates;
    std::vector<int> negatives;
    std::vector<int> epochs;
    std::vector<int> batches_per_epoch;
};
struct GridCell {
    TrainConfig config;
    double valid_mrr = 0.0;
};
/// Cartesian product of the non-empty axes (empty axes keep the base value).
std::vector<GridCell> grid_search(const kg::KnowledgeGraph& g_train, const TrainConfig& base, const Grid& grid, const Matrix& text,
                                  const std::function<double(ModelParams&)>& validate);

}  // namespace vulnkg::train
