#include "vulnkg/gnn.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace vulnkg::gnn {

std::string_view to_string(Fundamental f) {
    switch (f) {
        case Fundamental::h2h: return "h2h";
        case Fundamental::h2t: return "h2t";
        case Fundamental::t2h: return "t2h";
        case Fundamental::t2t: return "t2t";
    }
    return "?";
}

bool RelationGraph::contains(kg::RelationId from, Fundamental type, kg::RelationId to) const {
    return std::binary_search(edges.begin(), edges.end(), RelationEdge{from, type, to});
}

RelationGraph lift_relation_graph(std::span<const kg::Triple> triples, int num_relations) {
    // per entity: relations where it is a head, and where it is a tail
    std::unordered_map<kg::EntityId, std::pair<std::set<kg::RelationId>, std::set<kg::RelationId>>> roles;
    for (const auto& t : triples) {
        if (t.relation < 0 || t.relation >= num_relations) throw kg::GraphError("triple relation outside vocabulary");
        roles[t.head].first.insert(t.relation);
        roles[t.tail].second.insert(t.relation);
    }
    std::set<RelationEdge> out;
    auto connect = [&](const std::set<kg::RelationId>& a, Fundamental f, const std::set<kg::RelationId>& b) {
        for (auto r1 : a)
            for (auto r2 : b) out.insert({r1, f, r2});
    };
    for (const auto& [e, hr] : roles) {
        const auto& [heads, tails] = hr;
        connect(heads, Fundamental::h2h, heads);
        connect(heads, Fundamental::h2t, tails);
        connect(tails, Fundamental::t2h, heads);
        connect(tails, Fundamental::t2t, tails);
    }
    RelationGraph rg;
    rg.num_relations = num_relations;
    rg.edges.assign(out.begin(), out.end());
    return rg;
}

RelationGraph lift_relation_graph(const kg::KnowledgeGraph& g) {
    return lift_relation_graph(g.triples(), static_cast<int>(g.num_relations()));
}

// --- parameters --------------------------------------------------------------

std::vector<Parameter*> ModelParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& [name, group] : groups()) out.insert(out.end(), group.begin(), group.end());
    return out;
}

std::vector<std::pair<std::string, std::vector<Parameter*>>> ModelParams::groups() {
    std::vector<std::pair<std::string, std::vector<Parameter*>>> out;
    out.push_back({"r_fund", {&r_fund}});
    std::vector<Parameter*> rel, ent;
    for (auto& p : relation_update) rel.push_back(&p);
    for (auto& p : entity_update) ent.push_back(&p);
    for (auto& t : transform) ent.insert(ent.end(), {&t.w1, &t.b1, &t.w2, &t.b2});
    out.push_back({"relation_gnn", rel});
    out.push_back({"entity_gnn", ent});
    out.push_back({"scorer", {&score_w1, &score_b1, &score_w2, &score_b2}});
    if (config.fusion) out.push_back({"fusion", fusion.parameters()});
    return out;
}

std::vector<const Parameter*> ModelParams::parameters() const {
    auto mut = const_cast<ModelParams*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

void ModelParams::assign_values(const ModelParams& other) {
    if (!(other.config == config)) throw std::invalid_argument("model configurations differ");
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

void ModelParams::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams m;
    m.config = config;
    m.r_fund = r_fund;
    m.relation_update = relation_update;
    m.entity_update = entity_update;
    m.transform = transform;
    m.score_w1 = score_w1;
    m.score_b1 = score_b1;
    m.score_w2 = score_w2;
    m.score_b2 = score_b2;
    m.fusion = fusion;
    return m;
}

ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
    if (cfg.dim <= 0 || cfg.relation_layers < 0 || cfg.entity_layers < 0) throw std::invalid_argument("invalid model dimensions");
    const Index d = cfg.dim;
    ModelParams m;
    m.config = cfg;
    Matrix fund(kFundamentalCount, d);
    for (Index i = 0; i < fund.size(); ++i) fund.data()[i] = rng.normal();
    m.r_fund = Parameter("r_fund", fund);
    for (int l = 0; l < cfg.relation_layers; ++l) {
        m.relation_update.emplace_back("relation_gnn." + std::to_string(l) + ".w", num::glorot_uniform(2 * d, d, rng));
    }
    for (int l = 0; l < cfg.entity_layers; ++l) {
        const auto prefix = "entity_gnn." + std::to_string(l);
        m.entity_update.emplace_back(prefix + ".w", num::glorot_uniform(2 * d, d, rng));
        RelationTransform t;
        t.w1 = Parameter(prefix + ".g.w1", num::glorot_uniform(d, d, rng));
        t.b1 = Parameter(prefix + ".g.b1", Matrix::Zero(1, d));
        t.w2 = Parameter(prefix + ".g.w2", num::glorot_uniform(d, d, rng));
        t.b2 = Parameter(prefix + ".g.b2", Matrix::Zero(1, d));
        m.transform.push_back(std::move(t));
    }
    m.score_w1 = Parameter("scorer.w1", num::glorot_uniform(d, d, rng));
    m.score_b1 = Parameter("scorer.b1", Matrix::Zero(1, d));
    m.score_w2 = Parameter("scorer.w2", num::glorot_uniform(d, 1, rng));
    m.score_b2 = Parameter("scorer.b2", Matrix::Zero(1, 1));
    if (cfg.fusion) m.fusion = fusion::init_fusion({cfg.text_dim, cfg.fusion_hidden}, cfg.dim, rng);
    return m;
}

// --- relation level ----------------------------------------------------------

Matrix indicator_r(const Query& query, int relation_count, int d) {
    if (query.relation < 0 || query.relation >= relation_count) throw std::out_of_range("query relation out of range");
    Matrix m = Matrix::Zero(relation_count, d);
    m.row(query.relation).setOnes();
    return m;
}

namespace {

Tensor update(Tape& tape, const Tensor& state, const Tensor& agg, Parameter& w) {
    return num::relu(num::layer_norm(num::matmul(num::concat_cols(state, agg), tape.param(w))));
}

void check_width(const Tensor& t, Index d, const char* what) {
    if (t.cols() != d) throw num::ShapeError(std::string(what) + " has width " + std::to_string(t.cols()) + ", expected " + std::to_string(d));
}

}  // namespace

Tensor relation_gnn(Tape& tape, const RelationGraph& rg, const Query& query, ModelParams& params) {
    const Index d = params.config.dim;
    if (params.r_fund.value.rows() != kFundamentalCount || params.r_fund.value.cols() != d) throw num::ShapeError("R_fund must be 4 x d");
    std::vector<Index> src, dst, type;
    src.reserve(rg.edges.size());
    for (const auto& e : rg.edges) {
        src.push_back(e.from);
        dst.push_back(e.to);
        type.push_back(static_cast<Index>(e.type));
    }
    auto state = tape.input(indicator_r(query, rg.num_relations, static_cast<int>(d)));
    auto fund = tape.param(params.r_fund);
    for (auto& w : params.relation_update) {
        auto msg = num::mul(num::gather_rows(state, src), num::gather_rows(fund, type));
        auto agg = num::segment_sum(msg, dst, rg.num_relations);
        state = update(tape, state, agg, w);
    }
    return state;
}

// --- entity level ------------------------------------------------------------

Tensor indicator_e(const Query& query, const Tensor& r_q, Index entity_count) {
    if (query.head < 0 || query.head >= entity_count) throw std::out_of_range("query head out of range");
    if (query.relation < 0 || query.relation >= r_q.rows()) throw std::out_of_range("query relation out of range");
    const std::array<Index, 1> q{query.relation}, u{query.head};
    return num::segment_sum(num::gather_rows(r_q, q), u, entity_count);
}

Tensor relation_transform_g(Tape& tape, int layer, const Tensor& r_q, ModelParams& params) {
    auto& t = params.transform.at(static_cast<std::size_t>(layer));
    auto hidden = num::relu(num::add_row(num::matmul(r_q, tape.param(t.w1)), tape.param(t.b1)));
    return num::add_row(num::matmul(hidden, tape.param(t.w2)), tape.param(t.b2));
}

namespace {

std::uint64_t edge_key(Index h, Index r, Index t) {
    return (static_cast<std::uint64_t>(h) << 40) ^ (static_cast<std::uint64_t>(r) << 32) * 0x9E3779B1ull ^ static_cast<std::uint64_t>(t);
}

}  // namespace

EdgeIndex EdgeIndex::of(const kg::KnowledgeGraph& g) {
    EdgeIndex e;
    e.num_entities = static_cast<Index>(g.num_entities());
    for (const auto& t : g.triples()) {
        e.lookup_.emplace(edge_key(t.head, t.relation, t.tail), e.src.size());
        e.src.push_back(t.head);
        e.rel.push_back(t.relation);
        e.dst.push_back(t.tail);
    }
    return e;
}

std::optional<std::size_t> EdgeIndex::find(kg::EntityId h, kg::RelationId r, kg::EntityId t) const {
    auto matches = [&](std::size_t i) { return src[i] == h && rel[i] == r && dst[i] == t; };
    if (!lookup_.empty()) {
        auto it = lookup_.find(edge_key(h, r, t));
        if (it == lookup_.end()) return std::nullopt;
        if (matches(it->second)) return it->second;
        // a colliding key; only then pay for a scan
    }
    for (std::size_t i = 0; i < src.size(); ++i)
        if (matches(i)) return i;
    return std::nullopt;
}

EdgeIndex EdgeIndex::without(std::span<const std::size_t> positions) const {
    std::vector<char> drop(src.size(), 0);
    for (auto p : positions) drop.at(p) = 1;
    EdgeIndex out;
    out.num_entities = num_entities;
    const auto keep = src.size() - static_cast<std::size_t>(std::count(drop.begin(), drop.end(), 1));
    out.src.reserve(keep);
    out.rel.reserve(keep);
    out.dst.reserve(keep);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (drop[i]) continue;
        out.src.push_back(src[i]);
        out.rel.push_back(rel[i]);
        out.dst.push_back(dst[i]);
    }
    return out;
}

Tensor entity_gnn(Tape& tape, const EdgeIndex& edges, const Query& query, const Tensor& r_q, std::optional<Tensor> fused,
                  ModelParams& params) {
    const Index d = params.config.dim;
    check_width(r_q, d, "R_q");
    auto state = indicator_e(query, r_q, edges.num_entities);
    if (fused) {
        check_width(*fused, d, "fused features");
        if (fused->rows() != edges.num_entities) throw num::ShapeError("fused features need one row per entity");
        state = state + *fused;
    }
    for (std::size_t l = 0; l < params.entity_update.size(); ++l) {
        auto g = relation_transform_g(tape, static_cast<int>(l), r_q, params);
        auto msg = num::mul(num::gather_rows(state, edges.src), num::gather_rows(g, edges.rel));
        auto agg = num::segment_sum(msg, edges.dst, edges.num_entities);
        state = update(tape, state, agg, params.entity_update[l]);
    }
    return state;
}

Tensor score_logits(Tape& tape, const Tensor& states, ModelParams& params) {
    check_width(states, params.config.dim, "entity states");
    auto hidden = num::relu(num::add_row(num::matmul(states, tape.param(params.score_w1)), tape.param(params.score_b1)));
    return num::add_row(num::matmul(hidden, tape.param(params.score_w2)), tape.param(params.score_b2));
}

Tensor score_tail(Tape& tape, const Tensor& states, ModelParams& params) { return num::sigmoid(score_logits(tape, states, params)); }

// --- whole model -------------------------------------------------------------

GraphContext GraphContext::build(const kg::KnowledgeGraph& g, Matrix text) {
    GraphContext ctx;
    ctx.graph = &g;
    ctx.lift = lift_relation_graph(g);
    ctx.edges = EdgeIndex::of(g);
    ctx.incidence = fusion::incidence_of(g);
    if (text.size() > 0 && text.rows() != static_cast<Index>(g.num_entities())) {
        throw num::ShapeError("text features need one row per entity");
    }
    ctx.text = std::move(text);
    return ctx;
}

Tensor query_logits(Tape& tape, const GraphContext& ctx, const EdgeIndex& edges, const Query& query, ModelParams& params,
                    std::optional<Tensor> text_projection, std::optional<Tensor> r_q) {
    if (!r_q) r_q = relation_gnn(tape, ctx.lift, query, params);
    std::optional<Tensor> fused;
    if (params.config.fusion) {
        if (!text_projection) {
            if (ctx.text.size() == 0) throw std::invalid_argument("fusion is enabled but the graph has no text features");
            text_projection = fusion::project_text(tape, tape.input(ctx.text), params.fusion);
        }
        auto rel = fusion::relational_features(ctx.incidence, *r_q);
        fused = fusion::fuse_projected(tape, *text_projection, rel, params.fusion);
    }
    auto states = entity_gnn(tape, edges, query, *r_q, fused, params);
    return score_logits(tape, states, params);
}

Matrix text_projection_value(const GraphContext& ctx, ModelParams& params) {
    if (!params.config.fusion) return {};
    if (ctx.text.size() == 0) throw std::invalid_argument("fusion is enabled but the graph has no text features");
    Tape tape;
    return fusion::project_text(tape, tape.input(ctx.text), params.fusion).value();
}

Vector predict_logits(const GraphContext& ctx, const Query& query, ModelParams& params, const Matrix* text_projection) {
    Tape tape;
    std::optional<Tensor> proj;
    if (params.config.fusion && text_projection) proj = tape.input(*text_projection);
    return query_logits(tape, ctx, ctx.edges, query, params, proj).value().col(0);
}

}  // namespace vulnkg::gnn
