// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "vulnkg/baselines.hpp"
#include "vulnkg/cli.hpp"
#include "vulnkg/evalrank.hpp"
#include "vulnkg/gnn.hpp"
#include "vulnkg/ingest.hpp"
#include "vulnkg/kgstore.hpp"
#include "vulnkg/synthetic.hpp"
#include "vulnkg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

using namespace vulnkg;
namespace fs = std::filesystem;
using num::Index;
using num::Matrix;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << x;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// d=32, three layers per level: the desk-scale model every learning criterion uses
train::TrainConfig desk_config(bool fusion) {
    train::TrainConfig c;
    c.model.dim = 32;
    c.model.relation_layers = 3;
    c.model.entity_layers = 3;
    c.model.fusion = fusion;
    c.model.text_dim = 256;
    c.model.fusion_hidden = 64;
    c.learning_rate = 2e-3;
    c.negatives = 32;
    c.batch_size = 32;
    c.epochs = 4;
    return c;
}

Matrix local_text(const kg::KnowledgeGraph& g, int dim) {
    fusion::EmbeddingCache cache({}, dim);
    fusion::TextEmbedder embedder(fusion::Provider::local, cache);
    return embedder.embed_graph(g);
}

struct Trained {
    eval::MetricsReport metrics;
    gnn::ModelParams params;
    kg::KnowledgeGraph ranking;
    Matrix text;
};

Trained train_and_rank(const kg::KnowledgeGraph& g, const kg::DatasetSplit& split, const train::TrainConfig& cfg, bool both_directions) {
    auto ranking = eval::ranking_graph(g, split);
    const Matrix text = cfg.model.fusion ? local_text(ranking, cfg.model.text_dim) : Matrix{};
    const auto g_train = kg::augment_inverses(g.with_triples(split.train));
    auto result = train::train(g_train, cfg, text);
    auto params = std::move(result.last.params);
    const auto ctx = gnn::GraphContext::build(ranking, text);
    eval::EvalOptions opts;
    opts.both_directions = both_directions;
    const auto e = eval::evaluate_split(eval::model_scorer(ctx, params), ranking, split, eval::Task::all, opts);
    return {e.per_task.at("all"), std::move(params), std::move(ranking), text};
}

// --- 1 ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    synth::PlantedConfig pc;
    pc.cves = 10;
    pc.cpes = 5;
    pc.cwes = 4;
    pc.max_cpes_per_cve = 1;
    pc.seed = 11;
    const auto base = synth::planted_graph(pc);
    if (base.num_entities() > 20 || base.triples().size() > 40) return {false, "fixture graph too large"};
    const auto g = kg::augment_inverses(base);

    gnn::ModelConfig mc;
    mc.dim = 8;
    mc.relation_layers = 2;
    mc.entity_layers = 2;
    mc.fusion = true;
    mc.text_dim = 12;
    mc.fusion_hidden = 6;
    Rng rng(29);
    auto params = gnn::init_model(mc, rng);
    const auto ctx = gnn::GraphContext::build(g, local_text(g, mc.text_dim));

    const auto& positive = g.triples().front();
    const auto negatives = train::sample_negatives(positive, 4, g, rng);
    std::vector<Index> neg_rows;
    for (const auto& n : negatives) neg_rows.push_back(n.tail);
    const std::vector<Index> pos_row{positive.tail};
    const gnn::Query q{positive.head, positive.relation};
    auto loss = [&](num::Tape& t) {
        const auto logits = gnn::query_logits(t, ctx, ctx.edges, q, params);
        return train::bce_loss(num::gather_rows(logits, pos_row), num::gather_rows(logits, neg_rows));
    };

    double worst = 0.0;
    std::string per_group;
    for (auto& [name, group] : params.groups()) {
        const double err = num::grad_check(loss, group, 1e-5);
        worst = std::max(worst, err);
        per_group += " " + name + "=" + fmt(err, 2);
    }
    return {worst < 1e-4, "max relative error " + fmt(worst, 2) + " (threshold 1e-4);" + per_group};
}

// --- 2 ---------------------------------------------------------------------------

std::set<gnn::RelationEdge> brute_force_lift(const std::vector<kg::Triple>& ts) {
    using gnn::Fundamental;
    std::set<gnn::RelationEdge> out;
    for (const auto& a : ts) {
        for (const auto& b : ts) {
            if (a.head == b.head) out.insert({a.relation, Fundamental::h2h, b.relation});
            if (a.head == b.tail) out.insert({a.relation, Fundamental::h2t, b.relation});
            if (a.tail == b.head) out.insert({a.relation, Fundamental::t2h, b.relation});
            if (a.tail == b.tail) out.insert({a.relation, Fundamental::t2t, b.relation});
        }
    }
    return out;
}

Outcome lift_oracle() {
    Rng rng(2);
    int mismatches = 0;
    for (int round = 0; round < 200; ++round) {
        const int relations = 1 + static_cast<int>(rng.below(6));
        const int entities = 2 + static_cast<int>(rng.below(20));
        const int n = 1 + static_cast<int>(rng.below(50));
        std::vector<kg::Triple> ts;
        for (int i = 0; i < n; ++i)
            ts.push_back({static_cast<kg::EntityId>(rng.below(entities)), static_cast<kg::RelationId>(rng.below(relations)),
                          static_cast<kg::EntityId>(rng.below(entities)), {}});
        const auto lifted = gnn::lift_relation_graph(ts, relations);
        const std::set<gnn::RelationEdge> got(lifted.edges.begin(), lifted.edges.end());
        if (got != brute_force_lift(ts) || got.size() != lifted.edges.size()) ++mismatches;
    }
    return {mismatches == 0, std::to_string(200 - mismatches) + "/200 graphs match the pairwise enumeration"};
}

// --- 3 ---------------------------------------------------------------------------

Outcome metric_oracle() {
    Rng rng(3);
    double worst = 0.0;
    bool monotone = true, mrr_bound = true;
    for (int round = 0; round < 100; ++round) {
        const int queries = 1 + static_cast<int>(rng.below(30));
        const int entities = 2 + static_cast<int>(rng.below(40));
        std::vector<double> ranks;
        double rr = 0.0;
        std::map<int, double> hits{{1, 0.0}, {3, 0.0}, {10, 0.0}};
        for (int q = 0; q < queries; ++q) {
            // coarse scores so that ties occur
            eval::Vector scores(entities);
            for (int e = 0; e < entities; ++e) scores(e) = std::round(rng.uniform(0, 8));
            const auto truth = static_cast<kg::EntityId>(rng.below(entities));
            std::vector<kg::EntityId> candidates(static_cast<std::size_t>(entities));
            for (int e = 0; e < entities; ++e) candidates[static_cast<std::size_t>(e)] = e;
            ranks.push_back(eval::tie_aware_rank(scores, truth, candidates));

            // independent recomputation: mean position of the truth within its tie block
            double above = 0.0, tied = 0.0;
            for (int e = 0; e < entities; ++e) {
                if (scores(e) > scores(truth)) above += 1;
                if (e != truth && scores(e) == scores(truth)) tied += 1;
            }
            const double rank = above + 1 + tied / 2;
            rr += 1.0 / rank;
            for (auto& [k, h] : hits) h += rank <= k ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(ranks.back() - rank));
        }
        worst = std::max(worst, std::abs(eval::mrr(ranks) - rr / queries));
        double previous = -1.0;
        for (auto& [k, h] : hits) {
            const double got = eval::hits_at_k(ranks, k);
            worst = std::max(worst, std::abs(got - h / queries));
            monotone = monotone && got >= previous;
            previous = got;
        }
        for (int k = 1; k < 50; ++k) monotone = monotone && eval::hits_at_k(ranks, k + 1) >= eval::hits_at_k(ranks, k);
        mrr_bound = mrr_bound && eval::mrr(ranks) >= eval::hits_at_k(ranks, 1);
    }
    return {worst <= 1e-12 && monotone && mrr_bound,
            "max deviation " + fmt(worst, 2) + ", Hits monotone in K: " + (monotone ? "yes" : "no") + ", MRR >= Hits@1: " +
                (mrr_bound ? "yes" : "no")};
}

// --- 4 ---------------------------------------------------------------------------

Outcome memorization() {
    synth::PlantedConfig pc;
    pc.cves = 8;
    pc.cpes = 4;
    pc.cwes = 3;
    pc.max_cpes_per_cve = 1;
    pc.noise = 0.0;
    pc.seed = 3;
    const auto base = synth::planted_graph(pc);
    if (base.triples().size() != 20) return {false, "toy graph has " + std::to_string(base.triples().size()) + " triples"};
    kg::DatasetSplit split;
    split.train = base.triples();
    split.test = base.triples();
    const auto ranking = eval::ranking_graph(base, split);

    auto cfg = desk_config(false);
    cfg.model.relation_layers = 3;
    cfg.model.entity_layers = 3;
    cfg.batch_size = 20;
    cfg.learning_rate = 5e-3;
    cfg.negatives = 16;
    cfg.remove_easy_edges = false;
    const auto augmented = kg::augment_inverses(base);
    train::Trainer trainer(augmented, cfg);
    const auto ctx = gnn::GraphContext::build(ranking, {});
    double gnn_hits = 0.0;
    int gnn_epochs = 0;
    while (gnn_epochs < 500 && gnn_hits < 1.0) {
        trainer.run_epoch();
        if (++gnn_epochs % 10 == 0)
            gnn_hits = eval::evaluate_split(eval::model_scorer(ctx, trainer.params()), ranking, split, eval::Task::all).per_task.at("all").hits.at(1);
    }

    baseline::TransEConfig tc;
    tc.epochs = 500;
    const auto transe = baseline::transe_train(base, split, tc);
    const double transe_hits =
        eval::evaluate_split(baseline::transe_scorer(transe, ranking), ranking, split, eval::Task::all).per_task.at("all").hits.at(1);

    return {gnn_hits == 1.0 && transe_hits == 1.0, "graph model Hits@1 " + fmt(gnn_hits) + " after " + std::to_string(gnn_epochs) +
                                                       " epochs; TransE Hits@1 " + fmt(transe_hits) + " after 500 epochs"};
}

// --- 5 ---------------------------------------------------------------------------

struct Transductive {
    Trained plain;
    kg::DatasetSplit split;
    kg::KnowledgeGraph g;
};

Transductive& transductive_run() {
    static std::optional<Transductive> run;
    if (!run) {
        auto g = synth::planted_graph();
        auto split = kg::split_transductive(g, 0.1, 0.1, 0, {std::string(synth::kExhibits), std::string(synth::kAffects)});
        auto plain = train_and_rank(g, split, desk_config(false), true);
        run.emplace(Transductive{std::move(plain), std::move(split), std::move(g)});
    }
    return *run;
}

Outcome learning_signal() {
    const auto& r = transductive_run();
    const auto& m = r.plain.metrics;
    const double ratio = m.mrr / m.random_mrr;
    return {ratio >= 5.0, std::to_string(r.g.triples().size()) + " triples, test MRR " + fmt(m.mrr) + " vs random " + fmt(m.random_mrr) +
                              " (" + fmt(ratio, 3) + "x, threshold 5x) over " + std::to_string(m.queries) + " queries"};
}

// --- 6 ---------------------------------------------------------------------------

Outcome inductive_generalization() {
    const auto g = synth::planted_graph();
    const auto cutoff = synth::cutoff_for_fraction(g, 0.1);
    const auto split = kg::split_inductive(g, cutoff, Date{std::chrono::year{2100} / 1 / 1}, 0.0, 0.5, 0, {std::string(synth::kExhibits)});

    // every query head must be a CVE the training graph never saw
    std::set<kg::EntityId> seen;
    for (const auto& t : split.train) seen.insert({t.head, t.tail});
    const bool heads_unseen = std::ranges::all_of(split.test, [&](const kg::Triple& t) { return !seen.contains(t.head); });

    const auto trained = train_and_rank(g, split, desk_config(false), false);
    const auto& m = trained.metrics;
    const double ratio = m.mrr / m.random_mrr;

    bool refused = false;
    try {
        baseline::TransEConfig tc;
        tc.epochs = 1;
        baseline::transe_train(g, split, tc);
    } catch (const baseline::TransEError&) {
        refused = true;
    }
    return {ratio >= 3.0 && refused && heads_unseen,
            "test MRR " + fmt(m.mrr) + " vs random " + fmt(m.random_mrr) + " (" + fmt(ratio, 3) + "x, threshold 3x) over " +
                std::to_string(m.queries) + " unseen-head queries; heads unseen in training: " + (heads_unseen ? "yes" : "no") +
                "; TransE refuses: " + (refused ? "yes" : "no")};
}

// --- 7 ---------------------------------------------------------------------------

Outcome fusion_ablation() {
    auto& r = transductive_run();
    auto fused = train_and_rank(r.g, r.split, desk_config(true), true);

    // hard: the fusion path must change scores of the same weights
    auto without = fused.params.clone();
    without.config.fusion = false;
    const auto ctx_on = gnn::GraphContext::build(fused.ranking, fused.text);
    const auto ctx_off = gnn::GraphContext::build(fused.ranking, {});
    const auto& t = r.split.test.front();
    const double change = (gnn::predict_logits(ctx_on, {t.head, t.relation}, fused.params) -
                           gnn::predict_logits(ctx_off, {t.head, t.relation}, without))
                              .norm();

    const double on = fused.metrics.mrr, off = r.plain.metrics.mrr;
    const std::string soft = on >= off ? "holds" : "does not hold (reported only)";
    return {change > 1e-9, "score change from fusion " + fmt(change, 3) + "; MRR fusion on " + fmt(on) + " vs off " + fmt(off) +
                               ", soft expectation on >= off " + soft};
}

// --- 8 ---------------------------------------------------------------------------

kg::KnowledgeGraph fixture_graph(ingest::Source source, const fs::path& dir) {
    ingest::FetchOptions o;
    o.source = source;
    o.location = dir.string();
    std::vector<ingest::CveRecord> cves;
    for (const auto& d : ingest::fetch_records(o)) cves.push_back(ingest::parse_cve_record(d, source));
    if (source == ingest::Source::nvd) ingest::apply_change_history(cves, ingest::fetch_change_history(o));
    ingest::FetchOptions w;
    w.source = ingest::Source::mitre_cwe;
    w.location = "fixtures/cwe.xml";
    return kg::build_graph(cves, ingest::parse_cwe_catalog(ingest::fetch_records(w).front()));
}

std::set<kg::EntityId> entities_of(const std::vector<kg::Triple>& ts) {
    std::set<kg::EntityId> out;
    for (const auto& t : ts) out.insert({t.head, t.tail});
    return out;
}

Outcome split_contracts() {
    std::vector<std::pair<std::string, kg::KnowledgeGraph>> graphs;
    graphs.emplace_back("nvd fixture", fixture_graph(ingest::Source::nvd, "fixtures/nvd_small"));
    graphs.emplace_back("redhat fixture", fixture_graph(ingest::Source::redhat, "fixtures/redhat_small"));
    graphs.emplace_back("synthetic", synth::planted_graph());

    int checked = 0, violations = 0;
    for (const auto& [name, g] : graphs) {
        const bool synthetic = name == "synthetic";
        const std::vector<std::string> tasks =
            synthetic ? std::vector<std::string>{std::string(synth::kExhibits), std::string(synth::kAffects)} : kg::default_task_relations();
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto s = kg::split_transductive(g, 0.1, 0.1, seed, tasks);
            const auto train = entities_of(s.train);
            auto held = s.valid;
            held.insert(held.end(), s.test.begin(), s.test.end());
            for (auto e : entities_of(held)) violations += train.contains(e) ? 0 : 1;
            ++checked;
        }

        // cutoffs at the 70% and 90% points of the task-triple dates
        std::vector<Date> dates;
        for (const auto& t : g.triples())
            if (std::ranges::find(tasks, g.relation(t.relation).name) != tasks.end()) dates.push_back(t.created);
        std::ranges::sort(dates);
        for (double q : {0.7, 0.9}) {
            const auto cutoff = dates[static_cast<std::size_t>(q * static_cast<double>(dates.size() - 1))];
            const auto s = kg::split_inductive(g, cutoff, dates.back(), 0.1, 0.5, 0, tasks);
            Date latest_train{}, earliest_eval = Date::max();
            for (const auto& t : s.train) latest_train = std::max(latest_train, t.created);
            for (const auto* part : {&s.valid, &s.test})
                for (const auto& t : *part) earliest_eval = std::min(earliest_eval, t.created);
            if (!(latest_train <= cutoff && cutoff < earliest_eval)) ++violations;
            if (s.test.empty()) ++violations;
            ++checked;
        }
    }
    return {violations == 0, std::to_string(checked) + " splits over the NVD, Red Hat and synthetic graphs, " +
                                 std::to_string(violations) + " contract violations"};
}

// --- 9 ---------------------------------------------------------------------------

std::map<std::string, std::string> pipeline_reports(const fs::path& config) {
    const std::string c = config.string();
    for (std::vector<std::string> cmd : {std::vector<std::string>{"ingest"},
                                         {"build"},
                                         {"split"},
                                         {"train", "--model", "gnn"},
                                         {"eval", "--model", "gnn"},
                                         {"train", "--model", "transe"},
                                         {"eval", "--model", "transe"}}) {
        cmd.insert(cmd.begin(), {"--config", c});
        std::ostringstream out, err;
        if (cli::run(cmd, out, err) != 0) throw std::runtime_error(cmd[2] + " failed: " + err.str());
    }
    std::map<std::string, std::string> reports;
    for (const auto& f : fs::directory_iterator(cli::parse_config(config).paths.report_dir())) {
        std::ifstream in(f.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        reports[f.path().filename().string()] = s.str();
    }
    return reports;
}

Outcome pipeline_reproducibility() {
    const auto dir = fs::temp_directory_path() / ("vulnkg_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto work = dir / "work";
    const nlohmann::json cfg = {
        {"source", "synthetic"},
        {"seed", 1},
        {"paths", {{"work", work.string()}}},
        {"train",
         {{"epochs", 1},
          {"negatives", 16},
          {"batch_size", 32},
          {"batches_per_epoch", 4},
          {"model", {{"dim", 16}, {"relation_layers", 2}, {"entity_layers", 2}, {"fusion", true}, {"text_dim", 64}, {"fusion_hidden", 16}}}}},
        {"transe", {{"epochs", 20}, {"dim", 16}}},
    };
    std::ofstream(dir / "config.json") << cfg.dump(2);
    Outcome o;
    try {
        const auto first = pipeline_reports(dir / "config.json");
        fs::remove_all(work);
        const auto second = pipeline_reports(dir / "config.json");
        o.pass = first == second && first.size() >= 4;
        o.detail = std::to_string(first.size()) + " report files from two runs, " + (first == second ? "bit-identical" : "different");
    } catch (const std::exception& e) {
        o.detail = e.what();
    }
    fs::remove_all(dir);
    return o;
}

// --- 10 --------------------------------------------------------------------------

bool nonincreasing(const std::vector<kg::DelayRow>& rows) {
    for (const auto& r : rows)
        for (std::size_t i = 1; i < r.percent.size(); ++i)
            if (r.percent[i] > r.percent[i - 1]) return false;
    return true;
}

Outcome delay_report_invariant() {
    const std::vector<int> windows{1, 7, 30, 180};
    ingest::FetchOptions o;
    o.location = "fixtures/nvd_small";
    std::vector<ingest::CveRecord> cves;
    for (const auto& d : ingest::fetch_records(o)) cves.push_back(ingest::parse_cve_record(d, ingest::Source::nvd));
    ingest::apply_change_history(cves, ingest::fetch_change_history(o));
    const auto fixture_rows = kg::cpe_delay_report(cves, windows);
    bool ok = !fixture_rows.empty() && nonincreasing(fixture_rows);

    // arbitrary inputs: random publication times and CPE additions
    Rng rng(10);
    for (int round = 0; round < 200 && ok; ++round) {
        std::vector<ingest::CveRecord> random;
        const int n = 1 + static_cast<int>(rng.below(60));
        for (int i = 0; i < n; ++i) {
            ingest::CveRecord r;
            r.cve_id = "CVE-2020-" + std::to_string(10000 + i);
            r.published = Timestamp{std::chrono::seconds{1'500'000'000 + static_cast<long>(rng.below(200'000'000))}};
            const int cpes = static_cast<int>(rng.below(4));
            for (int c = 0; c < cpes; ++c) {
                const auto delay = std::chrono::seconds{static_cast<long>(rng.below(400ULL * 86400))};
                r.cpe_first_seen["cpe:2.3:a:v:p" + std::to_string(c)] = r.published + delay;
            }
            random.push_back(std::move(r));
        }
        ok = nonincreasing(kg::cpe_delay_report(random, windows));
    }

    std::string detail = "fixture:";
    for (const auto& r : fixture_rows) {
        detail += " " + std::to_string(r.year) + "[";
        for (std::size_t i = 0; i < r.percent.size(); ++i) detail += (i ? " " : "") + fmt(r.percent[i], 3);
        detail += "]";
    }
    return {ok, detail + "; 200 random inputs checked"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"lift oracle", lift_oracle},
        {"metric oracle", metric_oracle},
        {"memorization", memorization},
        {"learning signal", learning_signal},
        {"inductive generalization", inductive_generalization},
        {"fusion ablation", fusion_ablation},
        {"split contracts", split_contracts},
        {"pipeline reproducibility", pipeline_reproducibility},
        {"delay report invariant", delay_report_invariant},
    };
    // runtime limits in seconds, where the criterion states one
    const std::map<std::size_t, double> limits{{0, 30}, {1, 10}, {3, 120}, {4, 600}};

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& [name, check] = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (auto it = limits.find(i); it != limits.end() && secs > it->second) {
            o.pass = false;
            o.detail += "; exceeded the " + fmt(it->second) + " s limit";
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << name << ": " << o.detail << " [" << fmt(secs, 3) << " s]"
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
