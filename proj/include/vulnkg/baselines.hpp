#pragma once

#include "vulnkg/evalrank.hpp"
#include "vulnkg/kgstore.hpp"
#include "vulnkg/numcore.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vulnkg::baseline {

using num::Matrix;

struct TransEConfig {
    int dim = 64;
    double margin = 1.0;
    int norm = 1;
    double learning_rate = 0.01;
    int epochs = 200;
    int batch_size = 128;
    std::uint64_t seed = 0;
};

struct TransEParams {
    num::Parameter entity;    // |E| x d, rows L2-normalized after each step
    num::Parameter relation;  // |R| x d, forward relations only
    int norm = 1;
    std::vector<char> trained;  // entities that took part in training

    TransEParams() = default;
    TransEParams(const TransEParams&) = delete;
    TransEParams& operator=(const TransEParams&) = delete;
    TransEParams(TransEParams&&) = default;
    TransEParams& operator=(TransEParams&&) = default;
};

struct TransEError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// -||h + r - t||_p; larger is better.
double transe_score(kg::EntityId h, kg::RelationId r, kg::EntityId t, const TransEParams& p);

TransEParams transe_init(const kg::KnowledgeGraph& g, const TransEConfig& cfg);
/// Margin ranking loss of a batch of (positive, negative) pairs, on the tape.
num::Tensor transe_loss(num::Tape& tape, TransEParams& p, std::span<const kg::Triple> pos, std::span<const kg::Triple> neg, double margin);

/// Trains on the forward triples of g. Returns the loss per epoch through `loss_log` when given.
TransEParams transe_train(const kg::KnowledgeGraph& g_train, const TransEConfig& cfg, std::vector<double>* loss_log = nullptr);
/// Split entry point: inductive splits are refused since unseen entities have no embedding.
TransEParams transe_train(const kg::KnowledgeGraph& g, const kg::DatasetSplit& split, const TransEConfig& cfg,
                          std::vector<double>* loss_log = nullptr);

/// Scorer over an inverse-augmented ranking graph sharing g's vocabulary. Queries about entities
/// that were not trained are rejected.
eval::Scorer transe_scorer(const TransEParams& p, const kg::KnowledgeGraph& ranking);

void save_transe(const TransEParams& p, const TransEConfig& cfg, const std::string& graph_checksum, const std::filesystem::path& path);
TransEParams load_transe(const std::filesystem::path& path);

}  // namespace vulnkg::baseline
