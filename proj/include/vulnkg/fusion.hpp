#pragma once

#include "vulnkg/ingest.hpp"
#include "vulnkg/kgstore.hpp"
#include "vulnkg/numcore.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vulnkg::fusion {

using num::Matrix;
using num::Parameter;
using num::Tape;
using num::Tensor;
using num::Vector;

inline constexpr int kTextDim = 1536;
inline constexpr std::string_view kTokenEnv = "OPENAI_API_KEY";

enum class Provider { remote, local };
std::string_view to_string(Provider p);
Provider parse_provider(std::string_view s);

struct EmbeddingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TextEmbedding {
    std::string key;
    Vector vector;
    Provider provider = Provider::local;
};

/// Deterministic fallback: signed hashing of character 3-5 grams, L2-normalized.
Vector local_embedding(std::string_view text, int dim = kTextDim);

/// Content-hash keyed store; optional TSV persistence (appended on insert).
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path file = {}, int dim = kTextDim);

    std::optional<TextEmbedding> get(std::string_view text) const;
    void put(std::string_view text, const TextEmbedding& e);
    std::size_t size() const;
    int dim() const { return dim_; }
    static std::uint64_t key_of(std::string_view text);

private:
    std::filesystem::path file_;
    int dim_;
    mutable std::shared_mutex mu_;
    std::unordered_map<std::uint64_t, TextEmbedding> entries_;
};

using HttpPost = std::function<ingest::HttpResponse(const std::string& url, const std::map<std::string, std::string>& headers,
                                                     const std::string& body)>;
HttpPost default_http_post();

/// Client for an OpenAI-compatible POST /v1/embeddings endpoint.
class RemoteEmbedder {
public:
    RemoteEmbedder(std::string base_url, std::string token, HttpPost post = default_http_post());

    std::vector<Vector> embed(const std::vector<std::string>& texts);
    std::size_t calls() const { return calls_.load(); }

    std::string model = "text-embedding-ada-002";
    std::size_t batch_size = 256;
    int max_retries = 3;
    std::chrono::milliseconds backoff{500};
    int dim = kTextDim;

private:
    std::string base_url_;
    std::string token_;
    HttpPost post_;
    std::atomic<std::size_t> calls_{0};
};

class TextEmbedder {
public:
    /// `remote` may be null for the local provider.
    TextEmbedder(Provider provider, EmbeddingCache& cache, RemoteEmbedder* remote = nullptr);

    TextEmbedding get(const std::string& key, const std::string& text);
    /// One row per entity of g, using its description (label as fallback).
    Matrix embed_graph(const kg::KnowledgeGraph& g);
    Provider provider() const { return provider_; }

private:
    Provider provider_;
    EmbeddingCache& cache_;
    RemoteEmbedder* remote_;
};

TextEmbedding get_text_embedding(kg::EntityId entity, const kg::KnowledgeGraph& g, TextEmbedder& embedder);

/// Entity-to-relation incidence (either direction), weighted for a mean.
struct Incidence {
    std::vector<num::Index> entity;
    std::vector<num::Index> relation;
    std::vector<double> weight;
    num::Index num_entities = 0;
};
Incidence incidence_of(const kg::KnowledgeGraph& g);

/// Mean of R_q rows over the relations incident to each entity (zero when isolated).
Tensor relational_features(const Incidence& inc, const Tensor& r_q);
Vector relational_feature(kg::EntityId entity, const kg::KnowledgeGraph& g, const Matrix& r_q);

struct FusionConfig {
    int text_dim = kTextDim;
    int hidden = 800;
};

struct FusionWeights {
    Parameter w1;  // (text_dim + d) x hidden
    Parameter b1;  // 1 x hidden
    Parameter w2;  // hidden x d
    Parameter b2;  // 1 x d

    int text_dim() const { return static_cast<int>(w1.value.rows() - w2.value.cols()); }
    int dim() const { return static_cast<int>(w2.value.cols()); }
    std::vector<Parameter*> parameters() { return {&w1, &b1, &w2, &b2}; }
};
FusionWeights init_fusion(const FusionConfig& cfg, int d, Rng& rng);

/// concat -> linear -> ReLU -> linear, row-wise.
Tensor fuse(Tape& tape, const Tensor& text, const Tensor& rel, FusionWeights& w);
/// The text half of the first linear layer; query independent, so computed once per batch.
Tensor project_text(Tape& tape, const Tensor& text, FusionWeights& w);
Tensor fuse_projected(Tape& tape, const Tensor& text_projection, const Tensor& rel, FusionWeights& w);

}  // namespace vulnkg::fusion
