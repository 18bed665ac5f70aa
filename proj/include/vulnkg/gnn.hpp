#pragma once

#include "vulnkg/fusion.hpp"
#include "vulnkg/kgstore.hpp"
#include "vulnkg/numcore.hpp"

#include <array>
#include <compare>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace vulnkg::gnn {

using num::Index;
using num::Matrix;
using num::Parameter;
using num::Tape;
using num::Tensor;
using num::Vector;

/// Interaction of two relations through a shared entity: role in the first, role in the second.
enum class Fundamental : std::uint8_t { h2h = 0, h2t = 1, t2h = 2, t2t = 3 };
inline constexpr int kFundamentalCount = 4;
std::string_view to_string(Fundamental f);

struct RelationEdge {
    kg::RelationId from = 0;
    Fundamental type = Fundamental::h2h;
    kg::RelationId to = 0;

    friend auto operator<=>(const RelationEdge&, const RelationEdge&) = default;
};

struct RelationGraph {
    int num_relations = 0;
    std::vector<RelationEdge> edges;  // sorted, unique

    bool contains(kg::RelationId from, Fundamental type, kg::RelationId to) const;
};

RelationGraph lift_relation_graph(const kg::KnowledgeGraph& g);
RelationGraph lift_relation_graph(std::span<const kg::Triple> triples, int num_relations);

struct Query {
    kg::EntityId head = 0;
    kg::RelationId relation = 0;
};

struct ModelConfig {
    int dim = 64;
    int relation_layers = 6;
    int entity_layers = 6;
    bool fusion = true;
    int text_dim = fusion::kTextDim;
    int fusion_hidden = 800;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct RelationTransform {
    Parameter w1, b1, w2, b2;
};

struct ModelParams {
    ModelConfig config;
    Parameter r_fund;                             // 4 x d
    std::vector<Parameter> relation_update;       // 2d x d per layer
    std::vector<Parameter> entity_update;         // 2d x d per layer
    std::vector<RelationTransform> transform;     // per entity layer
    Parameter score_w1, score_b1, score_w2, score_b2;
    fusion::FusionWeights fusion;                 // empty when disabled

    ModelParams() = default;
    ModelParams(const ModelParams&) = delete;
    ModelParams& operator=(const ModelParams&) = delete;
    ModelParams(ModelParams&&) = default;
    ModelParams& operator=(ModelParams&&) = default;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    /// Copies values (not gradients) from a model of the same configuration.
    void assign_values(const ModelParams& other);
    /// Named weight groups: r_fund, relation_gnn, entity_gnn, scorer and (if enabled) fusion.
    std::vector<std::pair<std::string, std::vector<Parameter*>>> groups();
    void zero_grad();
    ModelParams clone() const;
};

ModelParams init_model(const ModelConfig& cfg, Rng& rng);

Matrix indicator_r(const Query& query, int relation_count, int d);
Tensor relation_gnn(Tape& tape, const RelationGraph& rg, const Query& query, ModelParams& params);

Tensor indicator_e(const Query& query, const Tensor& r_q, Index entity_count);
Tensor relation_transform_g(Tape& tape, int layer, const Tensor& r_q, ModelParams& params);

/// Flat edge arrays of a graph; messages run src -> dst.
struct EdgeIndex {
    std::vector<Index> src, rel, dst;
    Index num_entities = 0;

    static EdgeIndex of(const kg::KnowledgeGraph& g);
    std::size_t size() const { return src.size(); }
    /// Copy without the listed edges (positions into this index). Built for per-query use, so the
    /// copy skips the hash lookup and `find` on it scans.
    EdgeIndex without(std::span<const std::size_t> positions) const;
    std::optional<std::size_t> find(kg::EntityId h, kg::RelationId r, kg::EntityId t) const;

private:
    std::unordered_map<std::uint64_t, std::size_t> lookup_;
};

Tensor entity_gnn(Tape& tape, const EdgeIndex& edges, const Query& query, const Tensor& r_q, std::optional<Tensor> fused,
                  ModelParams& params);

/// Scoring MLP before the sigmoid, |E| x 1. Ranking uses these.
Tensor score_logits(Tape& tape, const Tensor& states, ModelParams& params);
Tensor score_tail(Tape& tape, const Tensor& states, ModelParams& params);

/// Everything about a graph the model needs that does not depend on the query.
struct GraphContext {
    const kg::KnowledgeGraph* graph = nullptr;
    RelationGraph lift;
    EdgeIndex edges;
    fusion::Incidence incidence;
    Matrix text;  // |E| x text_dim, empty when fusion is off

    static GraphContext build(const kg::KnowledgeGraph& g, Matrix text = {});
};

/// Full per-query forward returning |E| x 1 logits. `text_projection` is the query independent
/// text half of the fusion layer (see fusion::project_text); it is recomputed when absent. Likewise `r_q`
/// may be supplied when the relation-level pass is shared between queries.
Tensor query_logits(Tape& tape, const GraphContext& ctx, const EdgeIndex& edges, const Query& query, ModelParams& params,
                    std::optional<Tensor> text_projection = std::nullopt, std::optional<Tensor> r_q = std::nullopt);

/// Inference helper: logits for every entity as a tail of the query.
Vector predict_logits(const GraphContext& ctx, const Query& query, ModelParams& params, const Matrix* text_projection = nullptr);
/// Value of the text projection for inference (empty when fusion is off).
Matrix text_projection_value(const GraphContext& ctx, ModelParams& params);

}  // namespace vulnkg::gnn
