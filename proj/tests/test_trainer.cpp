#include <doctest.h>

#include "vulnkg/evalrank.hpp"
#include "vulnkg/fusion.hpp"
#include "vulnkg/synthetic.hpp"
#include "vulnkg/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <numeric>
#include <unistd.h>

using namespace vulnkg;
using namespace vulnkg::train;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("vulnkg_trainer_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

kg::KnowledgeGraph toy(int cves, int cpes, int cwes, std::uint64_t seed = 3) {
    synth::PlantedConfig cfg;
    cfg.cves = cves;
    cfg.cpes = cpes;
    cfg.cwes = cwes;
    cfg.max_cpes_per_cve = 1;
    cfg.noise = 0.0;
    cfg.seed = seed;
    return synth::planted_graph(cfg);
}

TrainConfig small_config(bool fusion = false) {
    TrainConfig c;
    c.model.dim = 8;
    c.model.relation_layers = 2;
    c.model.entity_layers = 2;
    c.model.fusion = fusion;
    c.model.text_dim = 16;
    c.model.fusion_hidden = 8;
    c.negatives = 8;
    c.batch_size = 16;
    c.learning_rate = 5e-3;
    c.epochs = 1;
    return c;
}

Matrix local_text(const kg::KnowledgeGraph& g, int dim) {
    fusion::EmbeddingCache cache({}, dim);
    fusion::TextEmbedder embedder(fusion::Provider::local, cache);
    return embedder.embed_graph(g);
}

double probe_score(const gnn::GraphContext& ctx, const ModelParams& params) {
    auto copy = params.clone();
    return eval::model_scorer(ctx, copy)({0, 0})(3);
}

}  // namespace

TEST_CASE("config round-trips through JSON and rejects unknown keys") {
    TrainConfig c = small_config(true);
    c.targets = {"exhibits"};
    c.seed = 42;
    const json j = c;
    CHECK(j.get<TrainConfig>() == c);

    json bad = j;
    bad["lr"] = 0.1;
    CHECK_THROWS_AS(bad.get<TrainConfig>(), ConfigError);
    json bad_model = j;
    bad_model["model"]["dims"] = 3;
    CHECK_THROWS_AS(bad_model.get<TrainConfig>(), ConfigError);
    CHECK(json::object().get<TrainConfig>() == TrainConfig{});
}

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.negatives = 0;
    CHECK_THROWS(c.validate());
    c = {};
    c.learning_rate = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("negatives keep the tail kind, the count and avoid known triples") {
    const auto g = synth::planted_graph();
    NegativeSampler sampler(g);
    Rng rng(1);
    std::size_t checked = 0;
    for (const auto& t : g.triples()) {
        const auto negs = sampler.sample(t, 5, rng);
        REQUIRE(negs.size() == 5);
        for (const auto& n : negs) {
            CHECK(n.head == t.head);
            CHECK(n.relation == t.relation);
            CHECK(g.entity(n.tail).kind == g.entity(t.tail).kind);
            CHECK(n != t);
            CHECK_FALSE(g.has_triple(n.head, n.relation, n.tail));
        }
        checked += negs.size();
    }
    CHECK(checked == 5 * g.triples().size());
}

TEST_CASE("negatives for an exhibits positive are CWEs") {
    const auto g = synth::planted_graph();
    const auto exhibits = g.relation_id(synth::kExhibits);
    Rng rng(9);
    for (const auto& t : g.triples()) {
        if (t.relation != exhibits) continue;
        for (const auto& n : sample_negatives(t, 64, g, rng)) REQUIRE(g.entity(n.tail).kind == kg::EntityKind::CWE);
    }
}

TEST_CASE("small candidate pools sample with replacement and warn") {
    const auto g = toy(6, 3, 2);
    const auto t = g.triples().front();
    NegativeSampler sampler(g);
    Rng rng(2);
    std::string warning;
    const auto negs = sampler.sample(t, 10, rng, &warning);
    CHECK(negs.size() == 10);
    CHECK_FALSE(warning.empty());
    for (const auto& n : negs) CHECK_FALSE(g.has_triple(n.head, n.relation, n.tail));
}

TEST_CASE("bce loss values") {
    const std::vector<double> half{0.5};
    CHECK(bce_loss(0.5, half) == doctest::Approx(1.386294).epsilon(1e-6));
    const std::vector<double> zeros{0.0, 0.0, 0.0};
    CHECK(bce_loss(1.0, zeros) == doctest::Approx(0.0));
    // clamping keeps the worst case finite
    const std::vector<double> ones{1.0};
    CHECK(std::isfinite(bce_loss(0.0, ones)));
    CHECK(bce_loss(0.0, ones) == doctest::Approx(-2.0 * std::log(kLogFloor)));

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> negs(1 + rng.below(6));
        for (auto& p : negs) p = rng.uniform();
        CHECK(bce_loss(rng.uniform(), negs) >= 0.0);
    }
}

TEST_CASE("bce loss on logits agrees with the probability form") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const double pos = rng.uniform(-4, 4);
        Matrix neg(6, 1);
        std::vector<double> p_negs;
        for (num::Index i = 0; i < 6; ++i) {
            neg(i, 0) = rng.uniform(-4, 4);
            p_negs.push_back(1.0 / (1.0 + std::exp(-neg(i, 0))));
        }
        num::Tape tape;
        const auto loss = bce_loss(tape.input(Matrix::Constant(1, 1, pos)), tape.input(neg));
        CHECK(loss.item() == doctest::Approx(bce_loss(1.0 / (1.0 + std::exp(-pos)), p_negs)).epsilon(1e-12));
    }
}

TEST_CASE("training queries cover both directions of the targets") {
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    const auto all = training_queries(g, {});
    const auto forward = std::count_if(g.triples().begin(), g.triples().end(), [&](const auto& t) { return !g.relation(t.relation).is_inverse; });
    CHECK(all.size() == 2 * static_cast<std::size_t>(forward));
    const auto only = training_queries(g, {"exhibits"});
    const auto exhibits = g.relation_id("exhibits");
    for (const auto& q : only) CHECK((q.query.relation == exhibits || q.query.relation == g.inverse(exhibits)));
    CHECK_THROWS(training_queries(g, {"nope"}));
}

TEST_CASE("trainer requires an augmented graph when configured") {
    const auto g = toy(10, 4, 3);
    CHECK_THROWS(Trainer(g, small_config()));
    auto cfg = small_config();
    cfg.inverse_augmentation = false;
    CHECK_NOTHROW(Trainer(g, cfg));
}

TEST_CASE("one step sends gradient to every weight group") {
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    auto cfg = small_config(true);
    Trainer trainer(g, cfg, local_text(g, cfg.model.text_dim));
    const std::vector<TrainQuery> batch(trainer.queries().begin(), trainer.queries().begin() + 8);
    const double loss = trainer.step(batch);
    REQUIRE(loss > 0.0);
    const auto groups = trainer.params().groups();
    CHECK(groups.size() == 5);
    for (const auto& [name, params] : groups) {
        bool nonzero = false;
        for (const auto* p : params) nonzero = nonzero || p->grad.cwiseAbs().maxCoeff() > 0.0;
        CHECK_MESSAGE(nonzero, name);
    }
}

TEST_CASE("same seed gives the same loss curve, threaded or not") {
    const auto g = kg::augment_inverses(toy(12, 4, 3));
    auto cfg = small_config(true);
    cfg.seed = 11;
    const auto text = local_text(g, cfg.model.text_dim);
    auto curve = [&](int threads) {
        auto c = cfg;
        c.threads = threads;
        Trainer t(g, c, text);
        std::vector<double> out;
        for (int e = 0; e < 3; ++e) out.push_back(t.run_epoch());
        return out;
    };
    const auto a = curve(1);
    CHECK(a == curve(1));
    CHECK(a == curve(3));
    cfg.seed = 12;
    Trainer other(g, cfg, text);
    CHECK(other.run_epoch() != a[0]);
}

TEST_CASE("loss halves on a 100-triple graph over 200 epochs") {
    const auto g = kg::augment_inverses(toy(45, 10, 4));
    REQUIRE(g.triples().size() / 2 >= 95);
    REQUIRE(g.triples().size() / 2 <= 105);
    auto cfg = small_config();
    cfg.epochs = 200;
    cfg.batches_per_epoch = 1;
    cfg.batch_size = 32;
    cfg.learning_rate = 5e-3;
    const auto result = train::train(g, cfg);
    REQUIRE(result.loss_log.size() == 200);
    CHECK(result.loss_log.back() <= 0.5 * result.loss_log.front());

    // 10-epoch moving average is lower at the end than at the start
    const auto avg = [&](std::size_t from) { return std::accumulate(result.loss_log.begin() + from, result.loss_log.begin() + from + 10, 0.0) / 10.0; };
    CHECK(avg(190) < avg(0));
}

TEST_CASE("a 20-triple graph is memorized") {
    const auto base = toy(8, 4, 3);
    REQUIRE(base.triples().size() == 20);
    kg::DatasetSplit split;
    split.train = base.triples();
    split.test = base.triples();
    const auto g = kg::augment_inverses(base);
    const auto ranking = eval::ranking_graph(base, split);

    auto cfg = small_config();
    cfg.model.dim = 32;
    cfg.model.relation_layers = 3;
    cfg.model.entity_layers = 3;
    cfg.batch_size = 20;
    cfg.learning_rate = 5e-3;
    cfg.negatives = 16;
    // pure capacity check: train on the same message graph that evaluation sees
    cfg.remove_easy_edges = false;
    Trainer trainer(g, cfg);
    const auto ctx = gnn::GraphContext::build(ranking, {});
    double hits1 = 0.0;
    for (int epoch = 1; epoch <= 500 && hits1 < 1.0; ++epoch) {
        trainer.run_epoch();
        if (epoch % 10 == 0) {
            const auto e = eval::evaluate_split(eval::model_scorer(ctx, trainer.params()), ranking, split, eval::Task::all);
            hits1 = e.per_task.at("all").hits.at(1);
        }
    }
    CHECK(hits1 == 1.0);
}

TEST_CASE("checkpoint round trip is bit-equal") {
    TempDir dir;
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    auto cfg = small_config(true);
    const auto text = local_text(g, cfg.model.text_dim);
    Trainer trainer(g, cfg, text);
    trainer.run_epoch();

    Checkpoint c;
    c.params = trainer.params().clone();
    c.config = cfg;
    c.graph_checksum = kg::graph_checksum(g);
    c.epoch = 1;
    c.loss_log = {0.75, 0.5};
    c.valid_mrr = 0.25;
    const auto path = dir.path / "model.ckpt";
    save_checkpoint(c, path);

    const auto back = load_checkpoint(path, c.graph_checksum);
    CHECK(back.config == cfg);
    CHECK(back.epoch == 1);
    CHECK(back.loss_log == c.loss_log);
    CHECK(back.valid_mrr == c.valid_mrr);
    const auto a = c.params.parameters();
    const auto b = back.params.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK(a[i]->value == b[i]->value);
    }
    const auto ctx = gnn::GraphContext::build(g, text);
    const double before = probe_score(ctx, c.params);
    const double after = probe_score(ctx, back.params);
    CHECK(std::memcmp(&before, &after, sizeof before) == 0);
}

TEST_CASE("checkpoint guards") {
    TempDir dir;
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    Rng rng(0);
    Checkpoint c;
    c.config = small_config();
    c.params = gnn::init_model(c.config.model, rng);
    c.graph_checksum = "abc";
    const auto path = dir.path / "model.ckpt";
    save_checkpoint(c, path);

    SUBCASE("wrong graph checksum is refused unless forced") {
        CHECK_THROWS_AS(load_checkpoint(path, std::string("xyz")), CheckpointError);
        CHECK_NOTHROW(load_checkpoint(path, std::string("xyz"), true));
        CHECK_NOTHROW(load_checkpoint(path, std::string("abc")));
    }
    SUBCASE("a flipped byte is a checksum error") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char byte = 0;
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x5a);
        f.seekp(200);
        f.write(&byte, 1);
        f.close();
        try {
            load_checkpoint(path);
            FAIL("corruption not detected");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("checksum") != std::string::npos);
        }
    }
    SUBCASE("truncation and foreign files are rejected") {
        fs::resize_file(path, fs::file_size(path) / 2);
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
        std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
        CHECK_THROWS_AS(load_checkpoint(dir.path / "junk.ckpt"), CheckpointError);
        CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), CheckpointError);
    }
}

TEST_CASE("train writes checkpoints and the loss log") {
    TempDir dir;
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    auto cfg = small_config();
    cfg.epochs = 3;
    int calls = 0;
    TrainOptions opts;
    opts.checkpoint_dir = dir.path;
    opts.validate = [&](ModelParams&) { return ++calls == 2 ? 0.9 : 0.1; };
    std::vector<int> seen;
    opts.on_epoch = [&](int epoch, double) { seen.push_back(epoch); };
    const auto r = train::train(g, cfg, {}, opts);
    CHECK(seen == std::vector<int>{1, 2, 3});
    CHECK(r.best_epoch == 2);
    CHECK(r.best_valid_mrr == 0.9);
    CHECK_FALSE(r.diverged);
    CHECK(fs::exists(dir.path / "last.ckpt"));
    CHECK(fs::exists(dir.path / "loss_log.tsv"));
    CHECK(load_checkpoint(dir.path / "best.ckpt").epoch == 2);
    CHECK(load_checkpoint(dir.path / "last.ckpt").epoch == 3);
    CHECK(load_checkpoint(dir.path / "last.ckpt").loss_log == r.loss_log);
}

TEST_CASE("divergence stops training with the last finite parameters") {
    const auto g = kg::augment_inverses(toy(10, 4, 3));
    auto cfg = small_config();
    cfg.epochs = 5;
    cfg.learning_rate = 1e306;
    const auto r = train::train(g, cfg);
    CHECK(r.diverged);
    CHECK(r.loss_log.size() < 5);
    for (const auto* p : r.last.params.parameters()) CHECK(p->value.allFinite());
}

TEST_CASE("grid search covers the Cartesian product") {
    const auto g = kg::augment_inverses(toy(8, 4, 3));
    auto cfg = small_config();
    Grid grid;
    grid.learning_rates = {1e-3, 1e-2};
    grid.negatives = {2, 4, 8};
    int calls = 0;
    const auto cells = grid_search(g, cfg, grid, {}, [&](ModelParams&) { return static_cast<double>(++calls); });
    REQUIRE(cells.size() == 6);
    CHECK(cells[0].config.learning_rate == 1e-3);
    CHECK(cells[5].config.negatives == 8);
    CHECK(cells[5].valid_mrr == 6.0);
    CHECK(cells[3].config.epochs == cfg.epochs);
}
