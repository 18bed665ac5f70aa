#include "vulnkg/evalrank.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace vulnkg::eval {

double tie_aware_rank(const Vector& scores, kg::EntityId truth, std::span<const kg::EntityId> candidates) {
    if (std::find(candidates.begin(), candidates.end(), truth) == candidates.end()) {
        throw EvalError("truth entity " + std::to_string(truth) + " is not among the candidates");
    }
    const double s = scores(truth);
    if (!std::isfinite(s)) throw EvalError("non-finite score for the truth entity");
    std::size_t greater = 0, ties = 0;
    for (auto c : candidates) {
        if (c == truth) continue;
        if (scores(c) > s) ++greater;
        else if (scores(c) == s) ++ties;
    }
    return 1.0 + static_cast<double>(greater) + static_cast<double>(ties) / 2.0;
}

namespace {

kg::EntityKind target_kind(const kg::KnowledgeGraph& g, const Query& q) { return g.relation(q.relation).tail_kind; }

}  // namespace

std::vector<kg::EntityId> candidate_set(const kg::KnowledgeGraph& g, const Query& query, kg::EntityId truth,
                                        const std::set<kg::EntityId>& known_true, bool filtered) {
    std::vector<kg::EntityId> out;
    for (auto e : g.active_entities_of_kind(target_kind(g, query))) {
        if (filtered && e != truth && known_true.contains(e)) continue;
        out.push_back(e);
    }
    return out;
}

RankingResult rank_query(const Scorer& model, const kg::KnowledgeGraph& g_inference, const Query& query, kg::EntityId truth,
                         const std::set<kg::EntityId>& known_true, bool filtered) {
    if (g_inference.entity(truth).kind != target_kind(g_inference, query)) throw EvalError("truth is not of the query's target kind");
    RankingResult r;
    r.query = query;
    r.truth = truth;
    r.filtered = filtered;
    r.candidates = candidate_set(g_inference, query, truth, known_true, filtered);
    const Vector scores = model(query);
    if (scores.size() != static_cast<num::Index>(g_inference.num_entities())) throw EvalError("scorer returned the wrong number of scores");
    r.rank_of_truth = tie_aware_rank(scores, truth, r.candidates);
    std::stable_sort(r.candidates.begin(), r.candidates.end(), [&](auto a, auto b) { return scores(a) > scores(b); });
    return r;
}

double mrr(std::span<const double> ranks) {
    if (ranks.empty()) throw EvalError("no ranks to average");
    double s = 0.0;
    for (double r : ranks) {
        if (!(r >= 1.0)) throw EvalError("ranks must be at least 1");
        s += 1.0 / r;
    }
    return s / static_cast<double>(ranks.size());
}

double hits_at_k(std::span<const double> ranks, int k) {
    if (ranks.empty()) throw EvalError("no ranks to count");
    if (k < 1) throw EvalError("k must be at least 1");
    const auto hit = std::count_if(ranks.begin(), ranks.end(), [k](double r) { return r <= k; });
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double random_reciprocal_rank(std::size_t n) {
    if (n == 0) throw EvalError("empty candidate set");
    double h = 0.0;
    for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
    return h / static_cast<double>(n);
}

double random_reciprocal_rank_variance(std::size_t n) {
    if (n == 0) throw EvalError("empty candidate set");
    double h2 = 0.0;
    for (std::size_t k = 1; k <= n; ++k) h2 += 1.0 / (static_cast<double>(k) * static_cast<double>(k));
    const double mean = random_reciprocal_rank(n);
    return h2 / static_cast<double>(n) - mean * mean;
}

MetricsReport summarize(std::span<const double> ranks, std::span<const std::size_t> candidate_counts) {
    MetricsReport m;
    m.queries = ranks.size();
    m.mrr = mrr(ranks);
    for (int k : {1, 3, 10}) m.hits[k] = hits_at_k(ranks, k);
    double var = 0.0;
    for (auto n : candidate_counts) {
        m.random_mrr += random_reciprocal_rank(n);
        var += random_reciprocal_rank_variance(n);
    }
    if (!candidate_counts.empty()) {
        const auto q = static_cast<double>(candidate_counts.size());
        m.random_mrr /= q;
        m.random_mrr_std = std::sqrt(var) / q;
    }
    return m;
}

std::string_view to_string(Task t) {
    switch (t) {
        case Task::cve_cwe: return "cve_cwe";
        case Task::cve_cpe: return "cve_cpe";
        case Task::all: return "all";
    }
    return "?";
}

Task parse_task(std::string_view s) {
    if (s == "cve_cwe") return Task::cve_cwe;
    if (s == "cve_cpe") return Task::cve_cpe;
    if (s == "all") return Task::all;
    throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected cve_cwe, cve_cpe or all)");
}

kg::KnowledgeGraph ranking_graph(const kg::KnowledgeGraph& g, const kg::DatasetSplit& split) {
    return kg::augment_inverses(g.with_triples(split.ranking_graph()));
}

namespace {

struct PendingQuery {
    std::vector<std::string> tasks;
    Query query;
    kg::EntityId truth;
};

}  // namespace

Evaluation evaluate_split(const Scorer& model, const kg::KnowledgeGraph& ranking, const kg::DatasetSplit& split, Task task,
                          const EvalOptions& opts) {
    if (!ranking.has_inverses()) throw EvalError("the ranking graph must be inverse-augmented");
    const auto& targets = opts.use_valid ? split.valid : split.test;
    if (targets.empty()) throw EvalError(opts.use_valid ? "the split has no validation triples" : "the split has no test triples");

    // every triple the split knows about counts as a known truth for filtering
    std::map<std::pair<kg::EntityId, kg::RelationId>, std::set<kg::EntityId>> known;
    auto learn = [&](const std::vector<kg::Triple>& ts) {
        for (const auto& t : ts) {
            known[{t.head, t.relation}].insert(t.tail);
            known[{t.tail, ranking.inverse(t.relation)}].insert(t.head);
        }
    };
    learn(split.train);
    learn(split.valid);
    learn(split.test);
    if (split.inference) learn(*split.inference);

    const auto cwe_rel = ranking.find_relation(kg::kMatchingCwe);
    const auto cve_rel = ranking.find_relation(kg::kMatchingCve);
    std::vector<PendingQuery> pending;
    for (const auto& t : targets) {
        std::vector<std::string> tasks;
        if ((task == Task::cve_cwe || task == Task::all) && cwe_rel && t.relation == *cwe_rel) tasks.emplace_back("cve_cwe");
        if ((task == Task::cve_cpe || task == Task::all) && cve_rel && t.relation == *cve_rel) tasks.emplace_back("cve_cpe");
        if (task == Task::all) tasks.emplace_back("all");
        if (tasks.empty()) continue;
        pending.push_back({tasks, {t.head, t.relation}, t.tail});
        if (opts.both_directions) pending.push_back({tasks, {t.tail, ranking.inverse(t.relation)}, t.head});
    }
    if (pending.empty()) throw EvalError("no evaluation triples for task " + std::string(to_string(task)));

    static const std::set<kg::EntityId> none;
    std::vector<double> ranks(pending.size());
    std::vector<std::size_t> sizes(pending.size());
    std::vector<std::exception_ptr> errors(pending.size());
    auto work = [&](std::size_t i) {
        try {
            const auto& p = pending[i];
            auto it = known.find({p.query.head, p.query.relation});
            const auto& kt = it == known.end() ? none : it->second;
            auto cands = candidate_set(ranking, p.query, p.truth, kt, opts.filtered);
            const Vector scores = model(p.query);
            ranks[i] = tie_aware_rank(scores, p.truth, cands);
            sizes[i] = cands.size();
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const auto workers = static_cast<std::size_t>(std::max(1, opts.threads));
    if (workers == 1) {
        for (std::size_t i = 0; i < pending.size(); ++i) work(i);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < pending.size(); i += workers) work(i);
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    Evaluation out;
    std::map<std::string, std::pair<std::vector<double>, std::vector<std::size_t>>> grouped;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const auto& p = pending[i];
        for (const auto& t : p.tasks) {
            grouped[t].first.push_back(ranks[i]);
            grouped[t].second.push_back(sizes[i]);
            out.records.push_back({t, ranking.entity(p.query.head).label, ranking.relation(p.query.relation).name,
                                   ranking.entity(p.truth).label, ranks[i], sizes[i]});
        }
    }
    for (const auto& [t, rs] : grouped) out.per_task[t] = summarize(rs.first, rs.second);
    return out;
}

namespace {

std::string num17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

std::string format_metrics(const Evaluation& e) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s %8s %10s\n", "task", "queries", "MRR", "Hits@1", "Hits@3", "Hits@10", "random");
    out << line;
    for (const auto& [task, m] : e.per_task) {
        std::snprintf(line, sizeof line, "%-8s %8zu %8.4f %8.4f %8.4f %8.4f %10.4f\n", task.c_str(), m.queries, m.mrr, m.hits.at(1),
                      m.hits.at(3), m.hits.at(10), m.random_mrr);
        out << line;
    }
    return out.str();
}

void write_evaluation(const Evaluation& e, const std::filesystem::path& path, const std::string& tag) {
    std::ostringstream out;
    out << "# " << tag << '\n';
    out << "query\ttask\trank\ttruth\tcandidates\n";
    for (const auto& r : e.records) {
        out << r.head << ' ' << r.relation << " ?\t" << r.task << '\t' << num17(r.rank) << '\t' << r.truth << '\t' << r.candidates << '\n';
    }
    out << "\n# summary\ntask\tMRR\tHits@1\tHits@3\tHits@10\tqueries\trandom_MRR\n";
    for (const auto& [task, m] : e.per_task) {
        out << task << '\t' << num17(m.mrr) << '\t' << num17(m.hits.at(1)) << '\t' << num17(m.hits.at(3)) << '\t' << num17(m.hits.at(10))
            << '\t' << m.queries << '\t' << num17(m.random_mrr) << '\n';
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file(path, out.str());
}

std::vector<PredictionRow> predict_report(const Scorer& model, const kg::KnowledgeGraph& g_inference, const std::string& cve_id,
                                          const std::string& relation, int top_n, bool exclude_known) {
    const auto cve = g_inference.find_entity(cve_id);
    if (!cve || g_inference.entity(*cve).kind != kg::EntityKind::CVE) throw EvalError("unknown CVE '" + cve_id + "'");
    if (top_n < 1) throw EvalError("top_n must be at least 1");
    auto rel = g_inference.relation_id(relation);
    const auto& rt = g_inference.relation(rel);
    if (rt.head_kind != kg::EntityKind::CVE) {
        if (rt.tail_kind != kg::EntityKind::CVE || !g_inference.has_inverses()) {
            throw EvalError("relation '" + relation + "' does not connect to a CVE in a queryable direction");
        }
        rel = g_inference.inverse(rel);
    }
    const Query q{*cve, rel};
    const Vector scores = model(q);
    std::vector<kg::EntityId> cands;
    for (auto e : g_inference.active_entities_of_kind(g_inference.relation(rel).tail_kind)) {
        if (exclude_known && g_inference.has_triple(*cve, rel, e)) continue;
        cands.push_back(e);
    }
    std::stable_sort(cands.begin(), cands.end(), [&](auto a, auto b) { return scores(a) > scores(b); });
    std::vector<PredictionRow> rows;
    for (std::size_t i = 0; i < cands.size() && static_cast<int>(i) < top_n; ++i) {
        rows.push_back({static_cast<int>(i + 1), g_inference.entity(cands[i]).label, scores(cands[i])});
    }
    return rows;
}

std::string format_predictions(const std::vector<PredictionRow>& rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream out;
    char buf[64];
    out << "rank  " << "label" << std::string(width - 5, ' ') << "  score\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%4d  ", r.rank);
        out << buf << r.label << std::string(width - r.label.size(), ' ');
        std::snprintf(buf, sizeof buf, "  %.6f\n", r.score);
        out << buf;
    }
    return out.str();
}

void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path, const std::string& tag) {
    nlohmann::json j = {{"tag", tag}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back({{"rank", r.rank}, {"label", r.label}, {"score", r.score}});
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file(path, j.dump(2) + "\n");
}

Scorer model_scorer(const gnn::GraphContext& ctx, gnn::ModelParams& params) {
    auto projection = std::make_shared<const num::Matrix>(gnn::text_projection_value(ctx, params));
    return [&ctx, &params, projection](const Query& q) {
        return gnn::predict_logits(ctx, q, params, projection->size() ? projection.get() : nullptr);
    };
}

}  // namespace vulnkg::eval
