#include <doctest.h>

#include "vulnkg/fusion.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <thread>

using namespace vulnkg;
using namespace vulnkg::fusion;
namespace fs = std::filesystem;

namespace {

kg::KnowledgeGraph small_graph() {
    kg::KnowledgeGraph g(kg::vulnerability_schema());
    auto cve = g.add_entity("CVE-2023-4863", kg::EntityKind::CVE, "CVE-2023-4863");
    g.set_description("CVE-2023-4863", "Heap buffer overflow in libwebp in Google Chrome prior to 116.0.5845.187");
    auto cpe = g.add_entity("cpe:2.3:a:google:chrome", kg::EntityKind::CPE);
    auto cwe = g.add_entity("CWE-787", kg::EntityKind::CWE, "CWE-787");
    g.set_description("CWE-787", "Out-of-bounds Write");
    auto vendor = g.add_entity("vendor:google", kg::EntityKind::Vendor);
    g.add_entity("CWE-1021", kg::EntityKind::CWE, "CWE-1021");
    g.add_triple(kg::Triple{cve, g.relation_id("matchingCWE"), cwe, {}});
    g.add_triple(kg::Triple{cpe, g.relation_id("matchingCVE"), cve, {}});
    g.add_triple(kg::Triple{cpe, g.relation_id("hasVendor"), vendor, {}});
    return g;
}

/// Serves the embeddings protocol with vectors derived from the input text and counts requests.
struct FakeEndpoint {
    std::size_t requests = 0;
    std::size_t largest_batch = 0;
    int fail_first = 0;

    HttpPost post() {
        return [this](const std::string& url, const std::map<std::string, std::string>& headers, const std::string& body) {
            ++requests;
            REQUIRE(url == "http://embed.test/v1/embeddings");
            REQUIRE(headers.at("Authorization") == "Bearer tok");
            if (fail_first > 0) {
                --fail_first;
                return ingest::HttpResponse{503, "busy", std::nullopt};
            }
            const auto req = nlohmann::json::parse(body);
            nlohmann::json data = nlohmann::json::array();
            largest_batch = std::max(largest_batch, req.at("input").size());
            for (std::size_t i = 0; i < req.at("input").size(); ++i) {
                const auto text = req.at("input")[i].get<std::string>();
                std::vector<double> v(kTextDim, 0.0);
                v[text.size() % kTextDim] = 1.0;
                data.push_back({{"index", i}, {"embedding", v}});
            }
            return ingest::HttpResponse{200, nlohmann::json{{"data", data}}.dump(), std::nullopt};
        };
    }
};

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vulnkg_fusion_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("entity without description embeds its label") {
    auto g = small_graph();
    EmbeddingCache cache;
    TextEmbedder emb(Provider::local, cache);
    auto cpe = *g.find_entity("cpe:2.3:a:google:chrome");
    auto e = get_text_embedding(cpe, g, emb);
    CHECK(e.vector.size() == kTextDim);
    CHECK(e.vector == local_embedding("cpe:2.3:a:google:chrome"));
    CHECK(e.provider == Provider::local);
}

TEST_CASE("local embedding is deterministic and unit length") {
    const std::string text = "Out-of-bounds Write in libwebp";
    auto a = local_embedding(text);
    auto b = local_embedding(text);
    CHECK(a == b);
    CHECK(std::abs(a.norm() - 1.0) < 1e-9);
    CHECK(std::abs(local_embedding("ab").norm() - 1.0) < 1e-9);
    CHECK(local_embedding("ABC DEF") == local_embedding("abc def"));
    CHECK(local_embedding("heap overflow") != local_embedding("sql injection"));
    CHECK_THROWS_AS(local_embedding(""), EmbeddingError);
    CHECK_THROWS_AS(local_embedding("   "), EmbeddingError);
}

TEST_CASE("shared character grams make texts closer") {
    auto a = local_embedding("heap buffer overflow in image decoder");
    auto b = local_embedding("heap buffer overflow in video decoder");
    auto c = local_embedding("cross-site request forgery token check");
    CHECK(a.dot(b) > a.dot(c));
}

TEST_CASE("cache returns fetched vector unchanged and persists") {
    auto dir = scratch("cache");
    auto file = dir / "emb.tsv";
    Vector v = local_embedding("some text");
    v(3) = 0.1 + 1e-16 * 3;  // exercise full precision
    {
        EmbeddingCache c(file);
        CHECK_FALSE(c.get("some text"));
        c.put("some text", {"k", v, Provider::remote});
        REQUIRE(c.get("some text"));
        CHECK(c.get("some text")->vector == v);
    }
    EmbeddingCache reloaded(file);
    CHECK(reloaded.size() == 1);
    auto hit = reloaded.get("some text");
    REQUIRE(hit);
    CHECK(hit->vector == v);
    CHECK(hit->provider == Provider::remote);
    CHECK_THROWS_AS(EmbeddingCache(file, 8), EmbeddingError);
    CHECK_THROWS_AS(reloaded.put("x", {"x", Vector::Zero(3), Provider::local}), EmbeddingError);
    fs::remove_all(dir);
}

TEST_CASE("cache tolerates concurrent readers and writers") {
    EmbeddingCache c({}, 4);
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&, w] {
            for (int i = 0; i < 200; ++i) {
                const auto key = std::to_string(i % 50);
                if (w == 0) c.put(key, {key, Vector::Constant(4, i % 50), Provider::local});
                if (auto hit = c.get(key)) CHECK(hit->vector(0) == static_cast<double>(i % 50));
            }
        });
    }
    for (auto& t : workers) t.join();
    CHECK(c.size() == 50);
}

TEST_CASE("remote embedder batches and retries") {
    FakeEndpoint fake;
    RemoteEmbedder remote("http://embed.test", "tok", fake.post());
    remote.backoff = std::chrono::milliseconds(1);
    std::vector<std::string> texts;
    for (int i = 0; i < 600; ++i) texts.push_back("text " + std::to_string(i));
    auto out = remote.embed(texts);
    REQUIRE(out.size() == 600);
    CHECK(fake.requests == 3);
    CHECK(fake.largest_batch == 256);
    CHECK(out[10](texts[10].size()) == 1.0);

    fake.fail_first = 2;
    CHECK(remote.embed({"retry me"}).size() == 1);
    fake.fail_first = 10;
    CHECK_THROWS_AS(remote.embed({"never"}), EmbeddingError);
    CHECK_THROWS_AS(RemoteEmbedder("http://embed.test", "", fake.post()), EmbeddingError);
}

TEST_CASE("cache coherence: no remote calls after warm-up") {
    auto g = small_graph();
    FakeEndpoint fake;
    RemoteEmbedder remote("http://embed.test", "tok", fake.post());
    EmbeddingCache cache;
    TextEmbedder emb(Provider::remote, cache, &remote);
    auto first = emb.embed_graph(g);
    CHECK(first.rows() == static_cast<num::Index>(g.num_entities()));
    const auto warm = remote.calls();
    CHECK(warm == 1);
    auto second = emb.embed_graph(g);
    for (std::size_t e = 0; e < g.num_entities(); ++e) get_text_embedding(static_cast<kg::EntityId>(e), g, emb);
    CHECK(remote.calls() == warm);
    CHECK(first == second);
}

TEST_CASE("relational feature is the incident relation mean") {
    auto g = small_graph();
    Matrix r_q(g.num_relations(), 2);
    for (num::Index r = 0; r < r_q.rows(); ++r) r_q.row(r) << r + 1.0, -(r + 1.0) * 2;
    const auto cwe = *g.find_entity("CWE-787");
    const auto cve = *g.find_entity("CVE-2023-4863");
    const auto isolated = *g.find_entity("CWE-1021");
    const auto m_cwe = g.relation_id("matchingCWE");
    const auto m_cve = g.relation_id("matchingCVE");

    CHECK(relational_feature(cwe, g, r_q) == Vector(r_q.row(m_cwe).transpose()));
    CHECK(relational_feature(isolated, g, r_q) == Vector::Zero(2));
    CHECK(relational_feature(cve, g, r_q).isApprox(Vector((r_q.row(m_cwe) + r_q.row(m_cve)).transpose() / 2.0)));

    Tape t;
    auto feats = relational_features(incidence_of(g), t.input(r_q));
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        CHECK(feats.value().row(static_cast<num::Index>(e)).transpose().isApprox(relational_feature(static_cast<kg::EntityId>(e), g, r_q)));
    }
}

TEST_CASE("fuse output shape and zero weights") {
    Rng rng(5);
    auto w = init_fusion({}, 64, rng);
    CHECK(w.w1.value.rows() == 1600);
    CHECK(w.w1.value.cols() == 800);
    CHECK(w.w2.value.cols() == 64);
    Tape t;
    auto text = t.input(Matrix(local_embedding("abc").transpose()));
    auto rel = t.input(Matrix::Constant(1, 64, 0.3));
    auto out = fuse(t, text, rel, w);
    CHECK(out.rows() == 1);
    CHECK(out.cols() == 64);

    for (auto* p : w.parameters()) p->value.setZero();
    CHECK(fuse(t, text, rel, w).value() == Matrix::Zero(1, 64));

    CHECK_THROWS_AS(fuse(t, t.input(Matrix::Zero(1, 100)), rel, w), num::ShapeError);
    CHECK_THROWS_AS(fuse(t, text, t.input(Matrix::Zero(1, 10)), w), num::ShapeError);
    CHECK_THROWS_AS(init_fusion({32, 8}, 64, rng), std::invalid_argument);
}

TEST_CASE("fuse matches direct evaluation") {
    // weights mirrored in tools/oracles/fusion_oracle.py
    FusionWeights w;
    Matrix w1(6, 3), b1(1, 3), w2(3, 2), b2(1, 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) w1(i, j) = std::sin(0.3 * i + 0.7 * j + 0.1);
    for (int j = 0; j < 3; ++j) b1(0, j) = 0.05 * j - 0.1;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) w2(i, j) = std::cos(0.5 * i - 0.2 * j);
    b2 << 0.01, 0.02;
    w.w1 = Parameter("w1", w1);
    w.b1 = Parameter("b1", b1);
    w.w2 = Parameter("w2", w2);
    w.b2 = Parameter("b2", b2);
    CHECK(w.text_dim() == 4);
    CHECK(w.dim() == 2);

    Tape t;
    Matrix text(1, 4), rel(1, 2);
    text << 0.5, -1.0, 2.0, 0.25;
    rel << 1.0, -0.5;
    auto out = fuse(t, t.input(text), t.input(rel), w);
    CHECK(out.value()(0, 0) == doctest::Approx(4.3999433589609396).epsilon(1e-12));
    CHECK(out.value()(0, 1) == doctest::Approx(4.8264529780167011).epsilon(1e-12));

    auto split = fuse_projected(t, project_text(t, t.input(text), w), t.input(rel), w);
    CHECK(split.value().isApprox(out.value(), 1e-14));
}

TEST_CASE("fuse gradient check") {
    Rng rng(11);
    auto w = init_fusion({12, 10}, 8, rng);
    Matrix text(3, 12), rel(3, 8);
    for (num::Index i = 0; i < text.size(); ++i) text.data()[i] = rng.normal();
    for (num::Index i = 0; i < rel.size(); ++i) rel.data()[i] = rng.normal();
    for (auto* p : w.parameters())
        for (num::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += 0.1 * rng.normal();

    auto params = w.parameters();
    auto loss = [&](Tape& t) {
        auto out = fuse(t, t.input(text), t.input(rel), w);
        return num::sum(num::mul(out, out));
    };
    CHECK(num::grad_check(loss, params, 1e-5) < 1e-4);

    auto wrt_rel = [&](Tape& t, const Tensor& x) {
        auto out = fuse_projected(t, project_text(t, t.input(text), w), x, w);
        return num::sum(num::sigmoid(out));
    };
    CHECK(num::grad_check(wrt_rel, rel, 1e-5) < 1e-4);
}
