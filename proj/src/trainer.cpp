#include "vulnkg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace vulnkg::gnn {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"dim", c.dim},           {"relation_layers", c.relation_layers}, {"entity_layers", c.entity_layers},
             {"fusion", c.fusion},     {"text_dim", c.text_dim},               {"fusion_hidden", c.fusion_hidden}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    constexpr std::string_view where = "model";
    reject_unknown_keys(j, {"dim", "relation_layers", "entity_layers", "fusion", "text_dim", "fusion_hidden"}, where);
    read_optional(j, "dim", c.dim, where);
    read_optional(j, "relation_layers", c.relation_layers, where);
    read_optional(j, "entity_layers", c.entity_layers, where);
    read_optional(j, "fusion", c.fusion, where);
    read_optional(j, "text_dim", c.text_dim, where);
    read_optional(j, "fusion_hidden", c.fusion_hidden, where);
}

}  // namespace vulnkg::gnn

namespace vulnkg::train {

using nlohmann::json;

// --- config --------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (negatives < 1) throw ConfigError("negatives per positive must be at least 1");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (batches_per_epoch < 0) throw ConfigError("batches per epoch must be nonnegative");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
    if (model.dim < 1 || model.relation_layers < 0 || model.entity_layers < 0) throw ConfigError("invalid model dimensions");
    if (model.fusion && (model.text_dim < model.dim || model.fusion_hidden < 1)) {
        throw ConfigError("fusion needs text_dim >= dim and a positive hidden width");
    }
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"negatives", c.negatives},
             {"epochs", c.epochs},
             {"batches_per_epoch", c.batches_per_epoch},
             {"batch_size", c.batch_size},
             {"seed", c.seed},
             {"inverse_augmentation", c.inverse_augmentation},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_epsilon", c.adam_epsilon},
             {"threads", c.threads},
             {"remove_easy_edges", c.remove_easy_edges},
             {"targets", c.targets},
             {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
    constexpr std::string_view where = "train";
    reject_unknown_keys(j,
                        {"learning_rate", "negatives", "epochs", "batches_per_epoch", "batch_size", "seed", "inverse_augmentation",
                         "beta1", "beta2", "adam_epsilon", "threads", "remove_easy_edges", "targets", "model"},
                        where);
    read_optional(j, "learning_rate", c.learning_rate, where);
    read_optional(j, "negatives", c.negatives, where);
    read_optional(j, "epochs", c.epochs, where);
    read_optional(j, "batches_per_epoch", c.batches_per_epoch, where);
    read_optional(j, "batch_size", c.batch_size, where);
    read_optional(j, "seed", c.seed, where);
    read_optional(j, "inverse_augmentation", c.inverse_augmentation, where);
    read_optional(j, "beta1", c.beta1, where);
    read_optional(j, "beta2", c.beta2, where);
    read_optional(j, "adam_epsilon", c.adam_epsilon, where);
    read_optional(j, "threads", c.threads, where);
    read_optional(j, "remove_easy_edges", c.remove_easy_edges, where);
    read_optional(j, "targets", c.targets, where);
    if (j.contains("model")) c.model = j.at("model").get<gnn::ModelConfig>();
}

// --- negatives and loss --------------------------------------------------------

NegativeSampler::NegativeSampler(const kg::KnowledgeGraph& g) : g_(g) {
    for (auto k : kg::kAllKinds) pool_[static_cast<int>(k)] = g.active_entities_of_kind(k);
}

std::vector<kg::Triple> NegativeSampler::sample(const kg::Triple& positive, int n, Rng& rng, std::string* warning) const {
    const auto kind = g_.entity(positive.tail).kind;
    const auto& pool = pool_.at(static_cast<int>(kind));
    std::vector<kg::EntityId> eligible;
    std::size_t known = 0;
    for (const auto& e : g_.out_edges(positive.head)) {
        if (e.relation == positive.relation && g_.entity(e.other).kind == kind) ++known;
    }
    // the truth itself may be absent from the graph (held-out triple), so it is excluded explicitly
    const bool truth_stored = g_.has_triple(positive.head, positive.relation, positive.tail);
    const auto available = pool.size() - std::min(pool.size(), known + (truth_stored ? 0 : 1));
    std::vector<kg::Triple> out;
    if (n <= 0) return out;
    auto usable = [&](kg::EntityId x) { return x != positive.tail && !g_.has_triple(positive.head, positive.relation, x); };
    if (available == 0) {
        if (warning) *warning = "no negative candidates of kind " + std::string(kg::to_string(kind));
        return out;
    }
    if (available < static_cast<std::size_t>(n) && warning) {
        *warning = "only " + std::to_string(available) + " negative candidates for " + std::to_string(n) + " draws";
    }
    // sparse rejection first; fall back to an explicit list when most of the pool is excluded
    if (available * 4 >= pool.size()) {
        while (static_cast<int>(out.size()) < n) {
            const auto x = pool[rng.below(pool.size())];
            if (usable(x)) out.push_back({positive.head, positive.relation, x, positive.created});
        }
        return out;
    }
    for (auto x : pool)
        if (usable(x)) eligible.push_back(x);
    for (int i = 0; i < n; ++i) out.push_back({positive.head, positive.relation, eligible[rng.below(eligible.size())], positive.created});
    return out;
}

std::vector<kg::Triple> sample_negatives(const kg::Triple& positive, int n, const kg::KnowledgeGraph& g, Rng& rng) {
    return NegativeSampler(g).sample(positive, n, rng);
}

double bce_loss(double p_pos, std::span<const double> p_negs) {
    double loss = -std::log(std::max(p_pos, kLogFloor));
    if (!p_negs.empty()) {
        double s = 0.0;
        for (double p : p_negs) s += std::log(std::max(1.0 - p, kLogFloor));
        loss -= s / static_cast<double>(p_negs.size());
    }
    return loss;
}

num::Tensor bce_loss(const num::Tensor& pos_logit, const num::Tensor& neg_logits) {
    auto loss = num::scale(num::sum(num::log_clamped(num::sigmoid(pos_logit), kLogFloor)), -1.0);
    if (neg_logits.rows() == 0) return loss;
    // 1 - sigmoid(x) == sigmoid(-x), without the cancellation
    auto log_not = num::log_clamped(num::sigmoid(num::scale(neg_logits, -1.0)), kLogFloor);
    return loss - num::scale(num::sum(log_not), 1.0 / static_cast<double>(neg_logits.rows()));
}

Adam::Adam(std::vector<num::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

// --- checkpoint container ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'K', 'G', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void read_doubles(double* out, std::size_t count) {
        need(count * sizeof(double));
        std::memcpy(out, data_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace

const Matrix& Container::block(std::string_view name) const {
    for (const auto& [n, m] : blocks)
        if (n == name) return m;
    throw CheckpointError("checkpoint has no block '" + std::string(name) + "'");
}

void write_container(const Container& c, const std::filesystem::path& path) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, c.config);
    put_string(out, c.graph_checksum);
    put<std::uint32_t>(out, c.epoch);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.blocks.size()));
    for (const auto& [name, m] : c.blocks) {
        put_string(out, name);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    put<std::uint32_t>(out, crc32(out));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // write beside and rename so a crash never leaves a half-written checkpoint in place
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, out);
    std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("no checkpoint at " + path.string());
    const auto data = read_file(path);
    if (data.size() < sizeof kMagic + 8 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint");
    }
    std::uint32_t stored;
    std::memcpy(&stored, data.data() + data.size() - 4, 4);
    const std::string_view body(data.data(), data.size() - 4);
    if (crc32(body) != stored) throw CheckpointError("checkpoint checksum error: " + path.string() + " is corrupted");
    Reader r(body.substr(sizeof kMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    Container c;
    c.config = r.get_string();
    c.graph_checksum = r.get_string();
    c.epoch = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name = r.get_string();
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (rows > (1u << 30) || cols > (1u << 30)) throw CheckpointError("implausible block shape in checkpoint");
        Matrix m(static_cast<num::Index>(rows), static_cast<num::Index>(cols));
        r.read_doubles(m.data(), static_cast<std::size_t>(m.size()));
        c.blocks.emplace_back(std::move(name), std::move(m));
    }
    if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    Container out;
    json cfg = c.config;
    out.config = json{{"kind", "gnn"}, {"train", cfg}}.dump();
    out.graph_checksum = c.graph_checksum;
    out.epoch = static_cast<std::uint32_t>(c.epoch);
    for (const auto* p : c.params.parameters()) out.blocks.emplace_back(p->name, p->value);
    Matrix log(1, static_cast<num::Index>(c.loss_log.size()));
    for (std::size_t i = 0; i < c.loss_log.size(); ++i) log(0, static_cast<num::Index>(i)) = c.loss_log[i];
    out.blocks.emplace_back("train.loss_log", log);
    if (c.valid_mrr) out.blocks.emplace_back("train.valid_mrr", Matrix::Constant(1, 1, *c.valid_mrr));
    write_container(out, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_graph_checksum, bool force) {
    auto c = read_container(path);
    if (expected_graph_checksum && *expected_graph_checksum != c.graph_checksum && !force) {
        throw CheckpointError("checkpoint was trained on graph " + c.graph_checksum + ", not " + *expected_graph_checksum +
                              " (force to override)");
    }
    json cfg;
    try {
        cfg = json::parse(c.config);
    } catch (const json::parse_error& e) {
        throw CheckpointError(std::string("unreadable checkpoint config: ") + e.what());
    }
    if (cfg.value("kind", "") != "gnn") throw CheckpointError("checkpoint does not hold the graph model");
    Checkpoint out;
    out.config = cfg.at("train").get<TrainConfig>();
    out.graph_checksum = c.graph_checksum;
    out.epoch = static_cast<int>(c.epoch);
    Rng rng(0);
    out.params = gnn::init_model(out.config.model, rng);
    for (auto* p : out.params.parameters()) {
        const auto& m = c.block(p->name);
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) throw CheckpointError("block '" + p->name + "' has the wrong shape");
        p->value = m;
        p->zero_grad();
    }
    const auto& log = c.block("train.loss_log");
    out.loss_log.assign(log.data(), log.data() + log.size());
    for (const auto& [name, m] : c.blocks)
        if (name == "train.valid_mrr") out.valid_mrr = m(0, 0);
    return out;
}

// --- training ------------------------------------------------------------------

std::vector<TrainQuery> training_queries(const kg::KnowledgeGraph& g, const std::vector<std::string>& targets) {
    std::set<kg::RelationId> wanted;
    for (const auto& name : targets) wanted.insert(g.relation_id(name));
    const bool augmented = g.has_inverses();
    std::vector<TrainQuery> out;
    for (const auto& t : g.triples()) {
        const auto& rel = g.relation(t.relation);
        if (rel.is_inverse) continue;
        if (!wanted.empty() && !wanted.contains(t.relation)) continue;
        out.push_back({{t.head, t.relation}, t.tail, t});
        if (augmented) {
            const auto inv = g.inverse(t.relation);
            out.push_back({{t.tail, inv}, t.head, {t.tail, inv, t.head, t.created}});
        }
    }
    return out;
}

Trainer::Trainer(const kg::KnowledgeGraph& g, TrainConfig cfg, Matrix text)
    : g_(g),
      cfg_(std::move(cfg)),
      ctx_(gnn::GraphContext::build(g, cfg_.model.fusion ? std::move(text) : Matrix{})),
      sampler_(g),
      rng_(cfg_.seed ^ 0x5eed5eedULL),
      adam_({}, 1.0) {
    cfg_.validate();
    if (cfg_.inverse_augmentation && !g.has_inverses()) throw std::invalid_argument("training graph must be inverse-augmented");
    if (!cfg_.inverse_augmentation && g.has_inverses()) throw std::invalid_argument("training graph is augmented but the config disables it");
    if (cfg_.model.fusion && ctx_.text.cols() != cfg_.model.text_dim) {
        throw std::invalid_argument("text features have " + std::to_string(ctx_.text.cols()) + " columns, expected " +
                                    std::to_string(cfg_.model.text_dim));
    }
    Rng init(cfg_.seed);
    params_ = gnn::init_model(cfg_.model, init);
    adam_ = Adam(params_.parameters(), cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.adam_epsilon);
    queries_ = training_queries(g, cfg_.targets);
    if (queries_.empty()) throw std::invalid_argument("no training triples for the target relations");
}

double Trainer::query_loss(const TrainQuery& tq, const std::vector<kg::Triple>& negs, const Matrix* projection, const Matrix& r_q,
                           double weight, num::Tape& tape, Matrix& r_grad, Matrix& p_grad) {
    tape.defer_parameter_grads(true);
    auto r_leaf = tape.input(r_q, true);
    std::optional<num::Tensor> p_leaf;
    if (projection) p_leaf = tape.input(*projection, true);

    std::optional<gnn::EdgeIndex> pruned;
    if (cfg_.remove_easy_edges) {
        // the query triple and its inverse would otherwise hand the answer to the model
        std::vector<std::size_t> drop;
        const auto& p = tq.positive;
        if (auto i = ctx_.edges.find(p.head, p.relation, p.tail)) drop.push_back(*i);
        if (g_.has_inverses()) {
            if (auto i = ctx_.edges.find(p.tail, g_.inverse(p.relation), p.head)) drop.push_back(*i);
        }
        pruned = ctx_.edges.without(drop);
    }
    const auto& edges = pruned ? *pruned : ctx_.edges;
    auto logits = gnn::query_logits(tape, ctx_, edges, tq.query, params_, p_leaf, r_leaf);
    const std::array<num::Index, 1> pos{tq.truth};
    std::vector<num::Index> neg;
    neg.reserve(negs.size());
    for (const auto& t : negs) neg.push_back(t.tail);
    auto loss = num::scale(bce_loss(num::pick(logits, pos), num::pick(logits, neg)), weight);
    tape.backward(loss);
    r_grad = r_leaf.grad();
    if (p_leaf) p_grad = p_leaf->grad();
    return loss.item();
}

double Trainer::step(std::span<const TrainQuery> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    params_.zero_grad();

    // negatives are drawn up front, in batch order, so threading never changes the stream
    std::vector<std::vector<kg::Triple>> negs;
    negs.reserve(batch.size());
    for (const auto& tq : batch) {
        std::string warning;
        negs.push_back(sampler_.sample(tq.positive, cfg_.negatives, rng_, &warning));
        if (!warning.empty() && warnings_.size() < 100) warnings_.push_back(warning);
    }

    num::Tape shared;
    std::map<kg::RelationId, num::Tensor> r_q;
    for (const auto& tq : batch) {
        if (!r_q.contains(tq.query.relation)) r_q.emplace(tq.query.relation, gnn::relation_gnn(shared, ctx_.lift, tq.query, params_));
    }
    std::optional<num::Tensor> projection;
    if (cfg_.model.fusion) projection = fusion::project_text(shared, shared.input(ctx_.text), params_.fusion);

    std::map<kg::RelationId, Matrix> r_grads;
    Matrix p_grad_total;
    double total = 0.0;
    const double weight = 1.0 / static_cast<double>(batch.size());
    const auto workers = static_cast<std::size_t>(cfg_.threads);
    for (std::size_t start = 0; start < batch.size(); start += workers) {
        const auto end = std::min(batch.size(), start + workers);
        const auto count = end - start;
        std::vector<num::Tape> tapes(count);
        std::vector<Matrix> rg(count), pg(count);
        std::vector<double> losses(count);
        std::vector<std::exception_ptr> errors(count);
        auto work = [&](std::size_t k) {
            try {
                const auto& tq = batch[start + k];
                losses[k] = query_loss(tq, negs[start + k], projection ? &projection->value() : nullptr, r_q.at(tq.query.relation).value(),
                                       weight, tapes[k], rg[k], pg[k]);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        if (count == 1) {
            work(0);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t k = 0; k < count; ++k) pool.emplace_back(work, k);
        }
        // merge in batch order so the sums do not depend on scheduling
        for (std::size_t k = 0; k < count; ++k) {
            if (errors[k]) std::rethrow_exception(errors[k]);
            tapes[k].flush_parameter_grads();
            const auto rel = batch[start + k].query.relation;
            if (auto it = r_grads.find(rel); it != r_grads.end()) it->second += rg[k];
            else r_grads.emplace(rel, rg[k]);
            if (projection) {
                if (p_grad_total.size() == 0) p_grad_total = pg[k];
                else p_grad_total += pg[k];
            }
            total += losses[k];
        }
    }
    for (const auto& [rel, grad] : r_grads) shared.seed(r_q.at(rel), grad);
    if (projection) shared.seed(*projection, p_grad_total);
    shared.backward();

    if (!std::isfinite(total)) throw num::NonFiniteError("training loss is not finite");
    adam_.step();
    return total;
}

double Trainer::run_epoch() {
    std::vector<std::size_t> order(queries_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    const auto batches = cfg_.batches_per_epoch > 0 ? static_cast<std::size_t>(cfg_.batches_per_epoch) : (order.size() + bs - 1) / bs;
    double sum = 0.0;
    std::size_t cursor = 0;
    std::vector<TrainQuery> batch;
    for (std::size_t b = 0; b < batches; ++b) {
        batch.clear();
        for (std::size_t k = 0; k < bs && (cfg_.batches_per_epoch > 0 || cursor < order.size()); ++k) {
            if (cursor == order.size()) {
                cursor = 0;
                rng_.shuffle(order);
            }
            batch.push_back(queries_[order[cursor++]]);
        }
        sum += step(batch);
    }
    return sum / static_cast<double>(batches);
}

TrainResult train(const kg::KnowledgeGraph& g_train, const TrainConfig& cfg, const Matrix& text, const TrainOptions& opts) {
    Trainer trainer(g_train, cfg, text);
    TrainResult result;
    const auto checksum = kg::graph_checksum(g_train);
    auto snapshot = [&](int epoch) {
        Checkpoint c;
        c.params = trainer.params().clone();
        c.config = cfg;
        c.graph_checksum = checksum;
        c.epoch = epoch;
        c.loss_log = result.loss_log;
        c.valid_mrr = result.best_valid_mrr;
        return c;
    };
    auto last_good = trainer.params().clone();
    int epoch = 0;
    for (; epoch < cfg.epochs; ++epoch) {
        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
            loss = trainer.run_epoch();
        } catch (const num::NonFiniteError&) {
        }
        if (!std::isfinite(loss)) {
            result.diverged = true;
            trainer.params().assign_values(last_good);
            break;
        }
        result.loss_log.push_back(loss);
        if (opts.on_epoch) opts.on_epoch(epoch + 1, loss);
        last_good.assign_values(trainer.params());
        if (opts.validate) {
            const double mrr = opts.validate(trainer.params());
            if (!result.best_valid_mrr || mrr > *result.best_valid_mrr) {
                result.best_valid_mrr = mrr;
                result.best_epoch = epoch + 1;
                if (!opts.checkpoint_dir.empty()) save_checkpoint(snapshot(epoch + 1), opts.checkpoint_dir / "best.ckpt");
            }
        }
    }
    result.last = snapshot(epoch);
    if (!opts.checkpoint_dir.empty()) {
        save_checkpoint(result.last, opts.checkpoint_dir / "last.ckpt");
        std::ostringstream log;
        log << "epoch\tloss\n";
        char buf[32];
        for (std::size_t i = 0; i < result.loss_log.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", result.loss_log[i]);
            log << i + 1 << '\t' << buf << '\n';
        }
        write_file(opts.checkpoint_dir / "loss_log.tsv", log.str());
    }
    return result;
}

std::vector<GridCell> grid_search(const kg::KnowledgeGraph& g_train, const TrainConfig& base, const Grid& grid, const Matrix& text,
                                  const std::function<double(ModelParams&)>& validate) {
    if (!validate) throw std::invalid_argument("grid search needs a validation function");
    auto axis = [](const auto& values, auto fallback) {
        using T = decltype(fallback);
        return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
    };
    std::vector<GridCell> out;
    for (double lr : axis(grid.learning_rates, base.learning_rate))
        for (int n : axis(grid.negatives, base.negatives))
            for (int e : axis(grid.epochs, base.epochs))
                for (int b : axis(grid.batches_per_epoch, base.batches_per_epoch)) {
                    auto cfg = base;
                    cfg.learning_rate = lr;
                    cfg.negatives = n;
                    cfg.epochs = e;
                    cfg.batches_per_epoch = b;
                    auto r = train(g_train, cfg, text);
                    out.push_back({cfg, validate(r.last.params)});
                }
    return out;
}

}  // namespace vulnkg::train
