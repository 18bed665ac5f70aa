#include "vulnkg/fusion.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace vulnkg::fusion {

using nlohmann::json;

std::string_view to_string(Provider p) { return p == Provider::remote ? "remote" : "local"; }

Provider parse_provider(std::string_view s) {
    if (s == "remote") return Provider::remote;
    if (s == "local" || s == "local-fallback") return Provider::local;
    throw std::invalid_argument("unknown embedding provider '" + std::string(s) + "'");
}

Vector local_embedding(std::string_view text, int dim) {
    if (dim <= 0) throw std::invalid_argument("embedding dimension must be positive");
    std::string norm;
    norm.reserve(text.size());
    for (unsigned char c : text) norm += static_cast<char>(std::tolower(c));
    if (trim(norm).empty()) throw EmbeddingError("cannot embed empty text");

    Vector v = Vector::Zero(dim);
    auto add_gram = [&](std::string_view gram) {
        const auto h = fnv1a64(gram);
        const auto bucket = static_cast<num::Index>(h % static_cast<std::uint64_t>(dim));
        v(bucket) += (h >> 63) ? -1.0 : 1.0;
    };
    if (norm.size() < 3) {
        add_gram(norm);
    } else {
        for (std::size_t n = 3; n <= 5; ++n) {
            for (std::size_t i = 0; i + n <= norm.size(); ++i) add_gram(std::string_view(norm).substr(i, n));
        }
    }
    const double len = v.norm();
    if (len == 0.0) {
        // every gram cancelled out; fall back to a single indicator so the vector stays unit length
        v(static_cast<num::Index>(fnv1a64(norm) % static_cast<std::uint64_t>(dim))) = 1.0;
        return v;
    }
    return v / len;
}

// --- cache -------------------------------------------------------------------

namespace {

constexpr std::string_view kCacheMagic = "vulnkg-embeddings";
constexpr std::string_view kCacheVersion = "1";

std::string hex64(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

}  // namespace

std::uint64_t EmbeddingCache::key_of(std::string_view text) { return fnv1a64(text); }

EmbeddingCache::EmbeddingCache(std::filesystem::path file, int dim) : file_(std::move(file)), dim_(dim) {
    if (file_.empty() || !std::filesystem::exists(file_)) return;
    std::ifstream in(file_);
    std::string line;
    if (!std::getline(in, line)) return;
    const auto head = split(line, '\t');
    if (head.size() != 3 || head[0] != kCacheMagic) throw EmbeddingError("not an embedding cache: " + file_.string());
    if (head[1] != kCacheVersion) throw EmbeddingError("embedding cache version " + head[1] + " is not supported");
    if (std::stoi(head[2]) != dim_) throw EmbeddingError("embedding cache dimension " + head[2] + " does not match " + std::to_string(dim_));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 3) throw EmbeddingError("malformed embedding cache line");
        TextEmbedding e;
        e.key = cols[0];
        e.provider = parse_provider(cols[1]);
        e.vector.resize(dim_);
        std::istringstream vs(cols[2]);
        for (int i = 0; i < dim_; ++i) {
            if (!(vs >> e.vector(i))) throw EmbeddingError("truncated embedding in cache");
        }
        entries_[std::stoull(cols[0], nullptr, 16)] = std::move(e);
    }
}

std::optional<TextEmbedding> EmbeddingCache::get(std::string_view text) const {
    std::shared_lock lock(mu_);
    if (auto it = entries_.find(key_of(text)); it != entries_.end()) return it->second;
    return std::nullopt;
}

void EmbeddingCache::put(std::string_view text, const TextEmbedding& e) {
    if (e.vector.size() != dim_) throw EmbeddingError("embedding has dimension " + std::to_string(e.vector.size()));
    std::unique_lock lock(mu_);
    const auto key = key_of(text);
    entries_[key] = e;
    if (file_.empty()) return;
    const bool fresh = !std::filesystem::exists(file_);
    if (fresh && file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
    std::ofstream out(file_, std::ios::app);
    if (fresh) out << kCacheMagic << '\t' << kCacheVersion << '\t' << dim_ << '\n';
    out << hex64(key) << '\t' << to_string(e.provider) << '\t';
    char buf[32];
    for (int i = 0; i < dim_; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", e.vector(i));
        out << (i ? " " : "") << buf;
    }
    out << '\n';
}

std::size_t EmbeddingCache::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

// --- remote ------------------------------------------------------------------

HttpPost default_http_post() {
    return [](const std::string& url, const std::map<std::string, std::string>& headers, const std::string& body) {
        const auto scheme = url.find("://");
        const auto path_at = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        const auto host = url.substr(0, path_at);
        const auto path = path_at == std::string::npos ? std::string("/") : url.substr(path_at);
        httplib::Client cli(host);
        cli.set_connection_timeout(30);
        cli.set_read_timeout(120);
        httplib::Headers h(headers.begin(), headers.end());
        auto res = cli.Post(path, h, body, "application/json");
        ingest::HttpResponse out;
        if (!res) return out;
        out.status = res->status;
        out.body = std::move(res->body);
        if (res->has_header("Retry-After")) {
            try {
                out.retry_after_seconds = std::stoi(res->get_header_value("Retry-After"));
            } catch (const std::exception&) {
            }
        }
        return out;
    };
}

RemoteEmbedder::RemoteEmbedder(std::string base_url, std::string token, HttpPost post)
    : base_url_(std::move(base_url)), token_(std::move(token)), post_(std::move(post)) {
    if (token_.empty()) throw EmbeddingError("remote embeddings need a token in $" + std::string(kTokenEnv));
}

std::vector<Vector> RemoteEmbedder::embed(const std::vector<std::string>& texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    const std::map<std::string, std::string> headers{{"Authorization", "Bearer " + token_}};
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
        const auto end = std::min(texts.size(), start + batch_size);
        json body = {{"model", model}, {"input", json::array()}};
        for (std::size_t i = start; i < end; ++i) {
            if (trim(texts[i]).empty()) throw EmbeddingError("cannot embed empty text");
            body["input"].push_back(texts[i]);
        }
        ingest::HttpResponse r;
        auto delay = backoff;
        for (int attempt = 0;; ++attempt) {
            ++calls_;
            r = post_(base_url_ + "/v1/embeddings", headers, body.dump());
            if (r.status == 200) break;
            const bool retryable = r.status == 0 || r.status == 429 || r.status >= 500;
            if (!retryable || attempt >= max_retries) {
                throw EmbeddingError("embedding request failed with status " + std::to_string(r.status) + ": " + r.body.substr(0, 200));
            }
            std::this_thread::sleep_for(r.retry_after_seconds ? std::chrono::milliseconds(*r.retry_after_seconds * 1000) : delay);
            delay *= 2;
        }
        json resp;
        try {
            resp = json::parse(r.body);
        } catch (const json::parse_error& e) {
            throw EmbeddingError(std::string("malformed embedding response: ") + e.what());
        }
        std::vector<Vector> batch(end - start);
        for (const auto& item : resp.at("data")) {
            const auto idx = item.value("index", std::size_t{0});
            if (idx >= batch.size()) throw EmbeddingError("embedding response index out of range");
            const auto& arr = item.at("embedding");
            if (static_cast<int>(arr.size()) != dim) {
                throw EmbeddingError("embedding response has dimension " + std::to_string(arr.size()) + ", expected " + std::to_string(dim));
            }
            Vector v(dim);
            for (int i = 0; i < dim; ++i) v(i) = arr[static_cast<std::size_t>(i)].get<double>();
            batch[idx] = std::move(v);
        }
        for (auto& v : batch) {
            if (v.size() != dim) throw EmbeddingError("embedding response is missing items");
            out.push_back(std::move(v));
        }
    }
    return out;
}

// --- embedder ----------------------------------------------------------------

TextEmbedder::TextEmbedder(Provider provider, EmbeddingCache& cache, RemoteEmbedder* remote)
    : provider_(provider), cache_(cache), remote_(remote) {
    if (provider_ == Provider::remote && !remote_) throw EmbeddingError("remote provider selected without a client");
}

TextEmbedding TextEmbedder::get(const std::string& key, const std::string& text) {
    if (trim(text).empty()) throw EmbeddingError("entity '" + key + "' has empty text");
    if (auto hit = cache_.get(text); hit && hit->provider == provider_) {
        hit->key = key;
        return *hit;
    }
    TextEmbedding e;
    e.key = key;
    e.provider = provider_;
    e.vector = provider_ == Provider::local ? local_embedding(text, cache_.dim()) : remote_->embed({text}).at(0);
    cache_.put(text, e);
    return e;
}

Matrix TextEmbedder::embed_graph(const kg::KnowledgeGraph& g) {
    Matrix out(static_cast<num::Index>(g.num_entities()), cache_.dim());
    std::vector<std::string> texts(g.num_entities());
    std::vector<std::size_t> missing;
    std::set<std::uint64_t> queued;
    for (std::size_t i = 0; i < g.num_entities(); ++i) {
        texts[i] = g.description_of(static_cast<kg::EntityId>(i));
        if (trim(texts[i]).empty()) texts[i] = g.entity(static_cast<kg::EntityId>(i)).label;
        auto hit = cache_.get(texts[i]);
        if (hit && hit->provider == provider_) {
            out.row(static_cast<num::Index>(i)) = hit->vector.transpose();
        } else if (queued.insert(EmbeddingCache::key_of(texts[i])).second) {
            missing.push_back(i);
        }
    }
    if (!missing.empty()) {
        std::vector<std::string> batch;
        for (auto i : missing) batch.push_back(texts[i]);
        std::vector<Vector> vecs;
        if (provider_ == Provider::remote) {
            vecs = remote_->embed(batch);
        } else {
            for (const auto& t : batch) vecs.push_back(local_embedding(t, cache_.dim()));
        }
        for (std::size_t k = 0; k < missing.size(); ++k) {
            cache_.put(batch[k], {g.entity(static_cast<kg::EntityId>(missing[k])).label, vecs[k], provider_});
        }
        for (std::size_t i = 0; i < g.num_entities(); ++i) out.row(static_cast<num::Index>(i)) = cache_.get(texts[i])->vector.transpose();
    }
    return out;
}

TextEmbedding get_text_embedding(kg::EntityId entity, const kg::KnowledgeGraph& g, TextEmbedder& embedder) {
    return embedder.get(g.entity(entity).label, g.description_of(entity));
}

// --- relational features and fusion -------------------------------------------

Incidence incidence_of(const kg::KnowledgeGraph& g) {
    Incidence inc;
    inc.num_entities = static_cast<num::Index>(g.num_entities());
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        std::set<kg::RelationId> rels;
        for (const auto& ed : g.out_edges(static_cast<kg::EntityId>(e))) rels.insert(ed.relation);
        for (const auto& ed : g.in_edges(static_cast<kg::EntityId>(e))) rels.insert(ed.relation);
        for (auto r : rels) {
            inc.entity.push_back(static_cast<num::Index>(e));
            inc.relation.push_back(r);
            inc.weight.push_back(1.0 / static_cast<double>(rels.size()));
        }
    }
    return inc;
}

Tensor relational_features(const Incidence& inc, const Tensor& r_q) {
    auto rows = num::gather_rows(r_q, inc.relation);
    return num::segment_sum(num::scale_rows(rows, inc.weight), inc.entity, inc.num_entities);
}

Vector relational_feature(kg::EntityId entity, const kg::KnowledgeGraph& g, const Matrix& r_q) {
    std::set<kg::RelationId> rels;
    for (const auto& ed : g.out_edges(entity)) rels.insert(ed.relation);
    for (const auto& ed : g.in_edges(entity)) rels.insert(ed.relation);
    Vector v = Vector::Zero(r_q.cols());
    for (auto r : rels) v += r_q.row(r).transpose();
    return rels.empty() ? v : Vector(v / static_cast<double>(rels.size()));
}

FusionWeights init_fusion(const FusionConfig& cfg, int d, Rng& rng) {
    if (cfg.text_dim < d) throw std::invalid_argument("text embedding dimension must be at least the model dimension");
    FusionWeights w;
    w.w1 = Parameter("fusion.w1", num::glorot_uniform(cfg.text_dim + d, cfg.hidden, rng));
    w.b1 = Parameter("fusion.b1", Matrix::Zero(1, cfg.hidden));
    w.w2 = Parameter("fusion.w2", num::glorot_uniform(cfg.hidden, d, rng));
    w.b2 = Parameter("fusion.b2", Matrix::Zero(1, d));
    return w;
}

Tensor project_text(Tape& tape, const Tensor& text, FusionWeights& w) {
    if (text.cols() != w.text_dim()) throw num::ShapeError("text features have " + std::to_string(text.cols()) + " columns, expected " + std::to_string(w.text_dim()));
    return num::matmul(text, num::row_block(tape.param(w.w1), 0, w.text_dim()));
}

Tensor fuse_projected(Tape& tape, const Tensor& text_projection, const Tensor& rel, FusionWeights& w) {
    if (rel.cols() != w.dim()) throw num::ShapeError("relational features have " + std::to_string(rel.cols()) + " columns, expected " + std::to_string(w.dim()));
    auto w1_rel = num::row_block(tape.param(w.w1), w.text_dim(), w.dim());
    auto hidden = num::relu(num::add_row(text_projection + num::matmul(rel, w1_rel), tape.param(w.b1)));
    return num::add_row(num::matmul(hidden, tape.param(w.w2)), tape.param(w.b2));
}

Tensor fuse(Tape& tape, const Tensor& text, const Tensor& rel, FusionWeights& w) {
    if (text.rows() != rel.rows()) throw num::ShapeError("text and relational features disagree on row count");
    if (text.cols() + rel.cols() != w.w1.value.rows()) throw num::ShapeError("fusion input width mismatch");
    auto x = num::concat_cols(text, rel);
    auto hidden = num::relu(num::add_row(num::matmul(x, tape.param(w.w1)), tape.param(w.b1)));
    return num::add_row(num::matmul(hidden, tape.param(w.w2)), tape.param(w.b2));
}

}  // namespace vulnkg::fusion
