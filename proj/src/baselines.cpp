#include "vulnkg/baselines.hpp"

#include "vulnkg/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace vulnkg::baseline {

using nlohmann::json;

double transe_score(kg::EntityId h, kg::RelationId r, kg::EntityId t, const TransEParams& p) {
    const auto& e = p.entity.value;
    const auto& rel = p.relation.value;
    if (h < 0 || t < 0 || h >= e.rows() || t >= e.rows()) throw std::out_of_range("entity id out of range");
    if (r < 0 || r >= rel.rows()) throw std::out_of_range("relation id out of range");
    const auto diff = e.row(h) + rel.row(r) - e.row(t);
    return p.norm == 1 ? -diff.cwiseAbs().sum() : -diff.norm();
}

namespace {

void normalize_entities(TransEParams& p) {
    auto& e = p.entity.value;
    for (num::Index i = 0; i < e.rows(); ++i) {
        const double n = e.row(i).norm();
        if (n > 0) e.row(i) /= n;
    }
}

int forward_relations(const kg::KnowledgeGraph& g) {
    int n = 0;
    for (const auto& r : g.relations())
        if (!r.is_inverse) ++n;
    return n;
}

}  // namespace

TransEParams transe_init(const kg::KnowledgeGraph& g, const TransEConfig& cfg) {
    if (cfg.dim < 1) throw std::invalid_argument("TransE dimension must be positive");
    if (cfg.norm != 1 && cfg.norm != 2) throw std::invalid_argument("TransE norm must be 1 or 2");
    Rng rng(cfg.seed);
    const double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
    auto uniform = [&](num::Index rows) {
        Matrix m(rows, cfg.dim);
        for (num::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
        return m;
    };
    TransEParams p;
    p.norm = cfg.norm;
    p.entity = num::Parameter("transe.entity", uniform(static_cast<num::Index>(g.num_entities())));
    Matrix rel = uniform(forward_relations(g));
    for (num::Index i = 0; i < rel.rows(); ++i) rel.row(i).normalize();
    p.relation = num::Parameter("transe.relation", rel);
    normalize_entities(p);
    p.trained.assign(g.num_entities(), 0);
    return p;
}

num::Tensor transe_loss(num::Tape& tape, TransEParams& p, std::span<const kg::Triple> pos, std::span<const kg::Triple> neg, double margin) {
    if (pos.size() != neg.size() || pos.empty()) throw std::invalid_argument("TransE loss needs matching, non-empty batches");
    auto e = tape.param(p.entity);
    auto r = tape.param(p.relation);
    auto distance = [&](std::span<const kg::Triple> ts) {
        std::vector<num::Index> h, rel, t;
        for (const auto& x : ts) {
            h.push_back(x.head);
            rel.push_back(x.relation);
            t.push_back(x.tail);
        }
        return num::row_norm(num::gather_rows(e, h) + num::gather_rows(r, rel) - num::gather_rows(e, t), p.norm);
    };
    const auto n = static_cast<num::Index>(pos.size());
    auto hinge = num::relu(distance(pos) - distance(neg) + tape.input(Matrix::Constant(n, 1, margin)));
    return num::scale(num::sum(hinge), 1.0 / static_cast<double>(n));
}

TransEParams transe_train(const kg::KnowledgeGraph& g_train, const TransEConfig& cfg, std::vector<double>* loss_log) {
    if (g_train.has_inverses()) throw TransEError("TransE trains on the forward graph");
    if (g_train.triples().empty()) throw TransEError("no training triples");
    auto p = transe_init(g_train, cfg);
    for (const auto& t : g_train.triples()) {
        p.trained[static_cast<std::size_t>(t.head)] = 1;
        p.trained[static_cast<std::size_t>(t.tail)] = 1;
    }
    std::map<kg::EntityKind, std::vector<kg::EntityId>> pool;
    for (auto k : kg::kAllKinds) pool[k] = g_train.active_entities_of_kind(k);

    Rng rng(cfg.seed ^ 0x7a45e11ULL);
    train::Adam adam({&p.entity, &p.relation}, cfg.learning_rate);
    std::vector<kg::Triple> triples = g_train.triples();
    auto corrupt = [&](const kg::Triple& t) {
        const bool head_side = rng.below(2) == 0;
        const auto kind = g_train.entity(head_side ? t.head : t.tail).kind;
        const auto& cands = pool.at(kind);
        kg::Triple n = t;
        for (int attempt = 0; attempt < 20; ++attempt) {
            const auto x = cands[rng.below(cands.size())];
            n = t;
            (head_side ? n.head : n.tail) = x;
            if (!g_train.has_triple(n.head, n.relation, n.tail)) break;
        }
        return n;
    };
    const auto bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(triples);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < triples.size(); start += bs) {
            const auto end = std::min(triples.size(), start + bs);
            std::span<const kg::Triple> pos(triples.data() + start, end - start);
            std::vector<kg::Triple> neg;
            for (const auto& t : pos) neg.push_back(corrupt(t));
            p.entity.zero_grad();
            p.relation.zero_grad();
            num::Tape tape;
            auto loss = transe_loss(tape, p, pos, neg, cfg.margin);
            tape.backward(loss);
            adam.step();
            normalize_entities(p);
            total += loss.item();
            ++batches;
        }
        if (loss_log) loss_log->push_back(total / static_cast<double>(batches));
    }
    return p;
}

TransEParams transe_train(const kg::KnowledgeGraph& g, const kg::DatasetSplit& split, const TransEConfig& cfg, std::vector<double>* loss_log) {
    if (split.mode == kg::SplitMode::inductive) {
        throw TransEError("TransE is transductive only: it cannot embed entities unseen during training");
    }
    return transe_train(g.with_triples(split.train), cfg, loss_log);
}

eval::Scorer transe_scorer(const TransEParams& p, const kg::KnowledgeGraph& ranking) {
    if (static_cast<num::Index>(ranking.num_entities()) != p.entity.value.rows()) {
        throw TransEError("ranking graph vocabulary does not match the TransE embeddings");
    }
    return [&p, &ranking](const eval::Query& q) {
        if (!p.trained.at(static_cast<std::size_t>(q.head))) {
            throw TransEError("TransE cannot score unseen entity '" + ranking.entity(q.head).label + "'");
        }
        const auto& rel = ranking.relation(q.relation);
        const bool inverse = rel.is_inverse;
        const auto forward = inverse ? rel.inverse_of : q.relation;
        eval::Vector out(static_cast<num::Index>(ranking.num_entities()));
        for (num::Index x = 0; x < out.size(); ++x) {
            if (!p.trained[static_cast<std::size_t>(x)]) {
                out(x) = std::numeric_limits<double>::lowest();
                continue;
            }
            const auto e = static_cast<kg::EntityId>(x);
            out(x) = inverse ? transe_score(e, forward, q.head, p) : transe_score(q.head, forward, e, p);
        }
        return out;
    };
}

void save_transe(const TransEParams& p, const TransEConfig& cfg, const std::string& graph_checksum, const std::filesystem::path& path) {
    train::Container c;
    c.config = json{{"kind", "transe"},
                    {"transe", {{"dim", cfg.dim}, {"margin", cfg.margin}, {"norm", p.norm}, {"learning_rate", cfg.learning_rate},
                                {"epochs", cfg.epochs}, {"batch_size", cfg.batch_size}, {"seed", cfg.seed}}}}
                   .dump();
    c.graph_checksum = graph_checksum;
    c.epoch = static_cast<std::uint32_t>(cfg.epochs);
    Matrix trained(1, static_cast<num::Index>(p.trained.size()));
    for (std::size_t i = 0; i < p.trained.size(); ++i) trained(0, static_cast<num::Index>(i)) = p.trained[i];
    c.blocks = {{"transe.entity", p.entity.value}, {"transe.relation", p.relation.value}, {"transe.trained", trained}};
    train::write_container(c, path);
}

TransEParams load_transe(const std::filesystem::path& path) {
    const auto c = train::read_container(path);
    const auto cfg = json::parse(c.config);
    if (cfg.value("kind", "") != "transe") throw train::CheckpointError("checkpoint does not hold a TransE model");
    TransEParams p;
    p.norm = cfg.at("transe").at("norm").get<int>();
    p.entity = num::Parameter("transe.entity", c.block("transe.entity"));
    p.relation = num::Parameter("transe.relation", c.block("transe.relation"));
    const auto& trained = c.block("transe.trained");
    for (num::Index i = 0; i < trained.size(); ++i) p.trained.push_back(trained(0, i) != 0.0 ? 1 : 0);
    return p;
}

}  // namespace vulnkg::baseline
