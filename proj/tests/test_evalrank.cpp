#include <doctest.h>

#include "vulnkg/evalrank.hpp"
#include "vulnkg/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unistd.h>

using namespace vulnkg;
using namespace vulnkg::eval;

namespace {

namespace fs = std::filesystem;

// Two-kind graph: CVEs 0..4 and CWEs 5..9, relation matchingCWE.
kg::KnowledgeGraph cwe_graph() {
    kg::KnowledgeGraph g({{std::string(kg::kMatchingCwe), kg::EntityKind::CVE, kg::EntityKind::CWE}});
    for (int i = 0; i < 5; ++i) g.add_entity("CVE-2020-000" + std::to_string(i), kg::EntityKind::CVE);
    for (int i = 0; i < 5; ++i) g.add_entity("CWE-" + std::to_string(100 + i), kg::EntityKind::CWE);
    for (int i = 0; i < 5; ++i) g.add_triple({i, 0, 5 + i, {}});
    g.add_triple({0, 0, 6, {}});
    return kg::augment_inverses(g);
}

Scorer fixed(Vector v) {
    return [v](const Query&) { return v; };
}

// Independent rank: position of the truth in a descending sort, averaged over its tied block.
double sorted_rank(const std::vector<double>& scores, std::size_t truth) {
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), scores[truth], std::greater<>()) - sorted.begin();
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), scores[truth], std::greater<>()) - sorted.begin();
    return (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
}

}  // namespace

TEST_CASE("tie-aware rank") {
    Vector s(4);
    s << 0.9, 0.5, 0.9, 0.1;
    const std::vector<kg::EntityId> all{0, 1, 2, 3};
    CHECK(tie_aware_rank(s, 0, all) == 1.5);
    CHECK(tie_aware_rank(s, 1, all) == 3.0);
    CHECK(tie_aware_rank(s, 3, all) == 4.0);
    s(0) = 1.0;
    CHECK(tie_aware_rank(s, 0, all) == 1.0);
    const std::vector<kg::EntityId> some{1, 3};
    CHECK(tie_aware_rank(s, 1, some) == 1.0);
    CHECK_THROWS_AS(tie_aware_rank(s, 0, some), EvalError);
}

TEST_CASE("mrr and hits examples") {
    CHECK(mrr(std::vector<double>{1}) == 1.0);
    CHECK(mrr(std::vector<double>{1, 2, 4}) == doctest::Approx(0.583333).epsilon(1e-6));
    CHECK(hits_at_k(std::vector<double>{1, 11, 5}, 10) == doctest::Approx(2.0 / 3.0));
    CHECK(hits_at_k(std::vector<double>{1, 11, 5}, 11) == 1.0);
    CHECK(hits_at_k(std::vector<double>{1.5, 2}, 1) == 0.0);
    CHECK_THROWS_AS(mrr(std::vector<double>{}), EvalError);
    CHECK_THROWS_AS(hits_at_k(std::vector<double>{}, 1), EvalError);
    CHECK_THROWS_AS(hits_at_k(std::vector<double>{1}, 0), EvalError);
    CHECK_THROWS_AS(mrr(std::vector<double>{0.5}), EvalError);
    // larger ranks only ever lower the mean
    CHECK(mrr(std::vector<double>{1, 1e9}) < mrr(std::vector<double>{1, 1e3}));
    CHECK(mrr(std::vector<double>{1e300}) < 1e-299);
}

TEST_CASE("random baseline moments") {
    CHECK(random_reciprocal_rank(1) == 1.0);
    CHECK(random_reciprocal_rank(2) == 0.75);
    CHECK(random_reciprocal_rank(4) == doctest::Approx((1 + 0.5 + 1.0 / 3 + 0.25) / 4));
    CHECK(random_reciprocal_rank_variance(1) == 0.0);
    CHECK(random_reciprocal_rank_variance(2) == doctest::Approx(0.0625));
    CHECK_THROWS(random_reciprocal_rank(0));

    const std::vector<double> ranks{1, 3};
    const std::vector<std::size_t> sizes{2, 4};
    const auto m = summarize(ranks, sizes);
    CHECK(m.queries == 2);
    CHECK(m.random_mrr == doctest::Approx((0.75 + random_reciprocal_rank(4)) / 2));
    CHECK(m.random_mrr_std ==
          doctest::Approx(std::sqrt(random_reciprocal_rank_variance(2) + random_reciprocal_rank_variance(4)) / 2));
}

TEST_CASE("metrics match brute force on 100 random score matrices") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const auto queries = 1 + rng.below(30);
        const auto candidates = 2 + rng.below(40);
        std::vector<double> ranks, oracle;
        std::vector<std::size_t> sizes;
        for (std::size_t q = 0; q < queries; ++q) {
            // coarse scores so ties happen
            std::vector<double> row(candidates);
            for (auto& x : row) x = std::round(rng.uniform() * 8.0) / 8.0;
            Vector v = Eigen::Map<Vector>(row.data(), static_cast<num::Index>(row.size()));
            std::vector<kg::EntityId> cands(candidates);
            std::iota(cands.begin(), cands.end(), 0);
            const auto truth = static_cast<std::size_t>(rng.below(candidates));
            ranks.push_back(tie_aware_rank(v, static_cast<kg::EntityId>(truth), cands));
            oracle.push_back(sorted_rank(row, truth));
            sizes.push_back(candidates);
        }
        double rr = 0.0;
        for (double r : oracle) rr += 1.0 / r;
        CHECK(mrr(ranks) == doctest::Approx(rr / static_cast<double>(queries)).epsilon(1e-12));
        for (int k : {1, 3, 10}) {
            const auto hits = std::count_if(oracle.begin(), oracle.end(), [&](double r) { return r <= k; });
            CHECK(std::abs(hits_at_k(ranks, k) - static_cast<double>(hits) / static_cast<double>(queries)) < 1e-12);
        }
        const auto m = summarize(ranks, sizes);
        CHECK(m.hits.at(1) <= m.hits.at(3));
        CHECK(m.hits.at(3) <= m.hits.at(10));
        CHECK(m.hits.at(10) <= 1.0);
        CHECK(m.hits.at(1) <= m.mrr);
        CHECK(m.mrr <= 1.0);
    }
}

TEST_CASE("candidate sets are kind-restricted and filtered") {
    const auto g = cwe_graph();
    const auto rel = g.relation_id(kg::kMatchingCwe);
    const std::set<kg::EntityId> known{5, 6};
    const auto raw = candidate_set(g, {0, rel}, 5, known, false);
    CHECK(raw == std::vector<kg::EntityId>{5, 6, 7, 8, 9});
    const auto filtered = candidate_set(g, {0, rel}, 5, known, true);
    CHECK(filtered == std::vector<kg::EntityId>{5, 7, 8, 9});
    const auto inv = candidate_set(g, {6, g.inverse(rel)}, 1, {}, true);
    CHECK(inv == std::vector<kg::EntityId>{0, 1, 2, 3, 4});
}

TEST_CASE("rank_query ordering, filtering and errors") {
    const auto g = cwe_graph();
    const auto rel = g.relation_id(kg::kMatchingCwe);
    Vector s = Vector::Zero(10);
    s(5) = 0.5;
    s(6) = 0.9;
    s(7) = 0.2;
    s(8) = 0.7;
    const std::set<kg::EntityId> known{5, 6};
    const auto filtered = rank_query(fixed(s), g, {0, rel}, 5, known, true);
    const auto raw = rank_query(fixed(s), g, {0, rel}, 5, known, false);
    CHECK(filtered.rank_of_truth == 2.0);
    CHECK(raw.rank_of_truth == 3.0);
    CHECK(filtered.candidates == std::vector<kg::EntityId>{8, 5, 7, 9});
    CHECK(raw.candidates.front() == 6);
    CHECK(filtered.rank_of_truth <= static_cast<double>(filtered.candidates.size()));
    CHECK_THROWS_AS(rank_query(fixed(s), g, {0, rel}, 1, known, true), EvalError);
    CHECK_THROWS_AS(rank_query(fixed(Vector::Zero(3)), g, {0, rel}, 5, known, true), EvalError);
}

TEST_CASE("strictly increasing transforms leave rankings unchanged") {
    const auto g = cwe_graph();
    const auto rel = g.relation_id(kg::kMatchingCwe);
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        Vector s(10);
        for (num::Index i = 0; i < 10; ++i) s(i) = std::round(rng.uniform(-3, 3) * 4) / 4;
        const Vector t = s.unaryExpr([](double x) { return std::exp(x) * 3.0 + std::atan(x); });
        const auto truth = static_cast<kg::EntityId>(5 + rng.below(5));
        for (bool filtered : {true, false}) {
            const auto a = rank_query(fixed(s), g, {0, rel}, truth, {5, 6}, filtered);
            const auto b = rank_query(fixed(t), g, {0, rel}, truth, {5, 6}, filtered);
            CHECK(a.rank_of_truth == b.rank_of_truth);
            CHECK(a.candidates == b.candidates);
        }
        const auto f = rank_query(fixed(s), g, {0, rel}, truth, {5, 6, 7, 8, 9}, true);
        const auto r = rank_query(fixed(s), g, {0, rel}, truth, {5, 6, 7, 8, 9}, false);
        CHECK(f.rank_of_truth <= r.rank_of_truth);
    }
}

TEST_CASE("task parsing") {
    CHECK(parse_task("cve_cwe") == Task::cve_cwe);
    CHECK(parse_task("cve_cpe") == Task::cve_cpe);
    CHECK(parse_task("all") == Task::all);
    CHECK(to_string(Task::cve_cpe) == "cve_cpe");
    CHECK_THROWS(parse_task("cwe"));
}

TEST_CASE("evaluate_split tags tasks and counts both directions") {
    kg::KnowledgeGraph forward({{std::string(kg::kMatchingCwe), kg::EntityKind::CVE, kg::EntityKind::CWE}});
    for (const auto& e : cwe_graph().entities()) forward.add_entity(e.label, e.kind);
    kg::DatasetSplit split;
    split.train = {{0, 0, 5, {}}, {1, 0, 6, {}}, {2, 0, 7, {}}, {3, 0, 8, {}}, {4, 0, 9, {}}};
    split.test = {{0, 0, 6, {}}};
    const auto ranking = ranking_graph(forward, split);
    const Scorer uniform = [&](const Query&) { return Vector::Zero(static_cast<num::Index>(ranking.num_entities())); };

    const auto both = evaluate_split(uniform, ranking, split, Task::cve_cwe);
    REQUIRE(both.per_task.count("cve_cwe") == 1);
    CHECK(both.per_task.at("cve_cwe").queries == 2);
    // tail query: 5 is filtered, 6 ties with 7, 8, 9 -> 2.5; head query: CVE 1 is filtered, four CVEs tie -> 2.5
    CHECK(both.records[0].rank == 2.5);
    CHECK(both.records[1].rank == 2.5);
    const auto tails = evaluate_split(uniform, ranking, split, Task::cve_cwe, {.filtered = true, .both_directions = false});
    CHECK(tails.per_task.at("cve_cwe").queries == 1);
    const auto raw = evaluate_split(uniform, ranking, split, Task::cve_cwe, {.filtered = false, .both_directions = false});
    CHECK(raw.records[0].rank == 3.0);
    CHECK_THROWS_AS(evaluate_split(uniform, ranking, split, Task::cve_cpe), EvalError);
    CHECK_THROWS_AS(evaluate_split(uniform, ranking, split, Task::all, {.use_valid = true}), EvalError);
    CHECK_THROWS_AS(evaluate_split(uniform, forward.with_triples(split.train), split, Task::all), EvalError);
}

TEST_CASE("a structure-blind random scorer lands within 3 sigma of the analytic baseline") {
    const auto g = synth::planted_graph();
    const auto split = kg::split_transductive(g, 0.1, 0.2, 5, {"exhibits", "affects"});
    const auto ranking = ranking_graph(g, split);
    const auto n = static_cast<num::Index>(ranking.num_entities());
    const Scorer noise = [n](const Query& q) {
        Rng rng(static_cast<std::uint64_t>(q.head) * 1000003ULL + static_cast<std::uint64_t>(q.relation));
        Vector v(n);
        for (num::Index i = 0; i < n; ++i) v(i) = rng.uniform();
        return v;
    };
    const auto& m = evaluate_split(noise, ranking, split, Task::all).per_task.at("all");
    MESSAGE("mrr " << m.mrr << " random " << m.random_mrr << " std " << m.random_mrr_std);
    CHECK(std::abs(m.mrr - m.random_mrr) <= 3.0 * m.random_mrr_std);

    // an untrained graph model is not structure-blind: reachability alone lifts it above chance
    const auto ctx = gnn::GraphContext::build(ranking, {});
    gnn::ModelConfig cfg;
    cfg.dim = 16;
    cfg.relation_layers = 2;
    cfg.entity_layers = 2;
    cfg.fusion = false;
    Rng rng(77);
    auto params = gnn::init_model(cfg, rng);
    const auto& untrained = evaluate_split(model_scorer(ctx, params), ranking, split, Task::all).per_task.at("all");
    MESSAGE("untrained model mrr " << untrained.mrr);
    CHECK(untrained.mrr > untrained.random_mrr);
}

TEST_CASE("threaded evaluation matches sequential") {
    const auto g = synth::planted_graph();
    const auto split = kg::split_transductive(g, 0.1, 0.1, 1, {"exhibits"});
    const auto ranking = ranking_graph(g, split);
    const auto ctx = gnn::GraphContext::build(ranking, {});
    gnn::ModelConfig cfg;
    cfg.dim = 8;
    cfg.relation_layers = 1;
    cfg.entity_layers = 1;
    cfg.fusion = false;
    Rng rng(1);
    auto params = gnn::init_model(cfg, rng);
    const auto a = evaluate_split(model_scorer(ctx, params), ranking, split, Task::all);
    const auto b = evaluate_split(model_scorer(ctx, params), ranking, split, Task::all, {.threads = 4});
    CHECK(a.per_task == b.per_task);
}

TEST_CASE("evaluation report file") {
    const auto path = fs::temp_directory_path() / ("vulnkg_eval_" + std::to_string(::getpid())) / "report.tsv";
    Evaluation e;
    e.records.push_back({"cve_cwe", "CVE-1", "matchingCWE", "CWE-79", 2.5, 10});
    e.per_task["cve_cwe"] = summarize(std::vector<double>{2.5}, std::vector<std::size_t>{10});
    write_evaluation(e, path, "config abc123");
    std::ifstream in(path);
    std::stringstream text;
    text << in.rdbuf();
    const auto s = text.str();
    CHECK(s.rfind("# config abc123\n", 0) == 0);
    CHECK(s.find("CVE-1 matchingCWE ?\tcve_cwe\t2.5\tCWE-79\t10\n") != std::string::npos);
    CHECK(s.find("# summary") != std::string::npos);
    CHECK(s.find("cve_cwe\t0.40000000000000002\t0\t1\t1\t1\t") != std::string::npos);
    CHECK(format_metrics(e).find("cve_cwe") != std::string::npos);
    fs::remove_all(path.parent_path());
}

TEST_CASE("prediction report") {
    const auto g = cwe_graph();
    Vector s = Vector::Zero(10);
    for (num::Index i = 5; i < 10; ++i) s(i) = static_cast<double>(i);
    const auto all = predict_report(fixed(s), g, "CVE-2020-0000", std::string(kg::kMatchingCwe), 10, false);
    REQUIRE(all.size() == 5);
    CHECK(all[0].label == "CWE-104");
    CHECK(all[0].rank == 1);
    CHECK(all[4].score == 5.0);
    const auto top2 = predict_report(fixed(s), g, "CVE-2020-0000", std::string(kg::kMatchingCwe), 2, false);
    CHECK(top2.size() == 2);
    const auto fresh = predict_report(fixed(s), g, "CVE-2020-0000", std::string(kg::kMatchingCwe), 10, true);
    CHECK(fresh.size() == 3);
    for (const auto& r : fresh) CHECK((r.label != "CWE-100" && r.label != "CWE-101"));
    CHECK_THROWS_AS(predict_report(fixed(s), g, "CVE-1999-9999", std::string(kg::kMatchingCwe), 10, true), EvalError);
    CHECK_THROWS_AS(predict_report(fixed(s), g, "CWE-100", std::string(kg::kMatchingCwe), 10, true), EvalError);

    const auto table = format_predictions(fresh);
    CHECK(table.find("rank") == 0);
    CHECK(table.find("CWE-104") != std::string::npos);

    const auto path = fs::temp_directory_path() / ("vulnkg_pred_" + std::to_string(::getpid()) + ".json");
    write_predictions(fresh, path, "abc");
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("tag") == "abc");
    CHECK(j.at("rows").size() == 3);
    CHECK(j.at("rows")[0].at("label") == "CWE-104");
    fs::remove(path);
}

TEST_CASE("prediction through an inverse relation") {
    kg::KnowledgeGraph g({{std::string(kg::kMatchingCve), kg::EntityKind::CPE, kg::EntityKind::CVE}});
    g.add_entity("CVE-2021-0001", kg::EntityKind::CVE);
    g.add_entity("cpe:2.3:a:x:y", kg::EntityKind::CPE);
    g.add_entity("cpe:2.3:a:x:z", kg::EntityKind::CPE);
    g.add_triple({1, 0, 0, {}});
    g.add_triple({2, 0, 0, {}});
    const auto aug = kg::augment_inverses(g);
    Vector s(3);
    s << 0.0, 0.2, 0.8;
    const auto rows = predict_report(fixed(s), aug, "CVE-2021-0001", std::string(kg::kMatchingCve), 5, false);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "cpe:2.3:a:x:z");
    CHECK(predict_report(fixed(s), aug, "CVE-2021-0001", std::string(kg::kMatchingCve), 5, true).empty());
    CHECK_THROWS_AS(predict_report(fixed(s), g, "CVE-2021-0001", std::string(kg::kMatchingCve), 5, true), EvalError);
}
