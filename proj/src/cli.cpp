#include "vulnkg/cli.hpp"

#include <CLI11.hpp>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace vulnkg::cli {

using nlohmann::json;

std::string_view to_string(DataSource s) {
    switch (s) {
        case DataSource::nvd: return "nvd";
        case DataSource::redhat: return "redhat";
        case DataSource::synthetic: return "synthetic";
    }
    return "?";
}

DataSource parse_data_source(std::string_view s) {
    if (s == "nvd") return DataSource::nvd;
    if (s == "redhat") return DataSource::redhat;
    if (s == "synthetic") return DataSource::synthetic;
    throw ConfigError("unknown source '" + std::string(s) + "' (expected nvd, redhat or synthetic)");
}

// --- configuration -------------------------------------------------------------

void RunConfig::propagate_seed() {
    train.seed = seed;
    transe.seed = seed;
}

std::vector<std::string> RunConfig::task_relations() const {
    if (!split.tasks.empty()) return split.tasks;
    if (source == DataSource::synthetic) return {std::string(synth::kExhibits), std::string(synth::kAffects)};
    return kg::default_task_relations();
}

void RunConfig::validate() const {
    train.validate();
    if (split.valid_fraction < 0 || split.test_fraction <= 0 || split.valid_fraction + split.test_fraction >= 1.0) {
        throw ConfigError("split fractions must satisfy 0 <= valid, 0 < test and valid + test < 1");
    }
    if (split.train_cutoff && split.test_cutoff && !(*split.train_cutoff < *split.test_cutoff)) {
        throw ConfigError("split.train_cutoff must precede split.test_cutoff");
    }
    eval::parse_task(eval.task);
    if (eval.threads < 1) throw ConfigError("eval.threads must be at least 1");
    if (transe.dim < 1 || transe.epochs < 0 || transe.batch_size < 1 || !(transe.learning_rate > 0) || (transe.norm != 1 && transe.norm != 2)) {
        throw ConfigError("invalid transe settings");
    }
    if (embeddings.batch_size < 1) throw ConfigError("embeddings.batch_size must be at least 1");
    if (offline && source != DataSource::synthetic) {
        const auto& fixture = source == DataSource::nvd ? paths.nvd_fixture : paths.redhat_fixture;
        if (!fs::exists(fixture)) throw ConfigError("fixture path does not exist: " + fixture.string());
        if (!fs::exists(paths.cwe_fixture)) throw ConfigError("fixture path does not exist: " + paths.cwe_fixture.string());
    }
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

namespace {

std::optional<std::string> date_text(const std::optional<Date>& d) {
    if (!d) return std::nullopt;
    return format_date(*d);
}

json optional_json(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

void read_date(const json& obj, std::string_view key, std::optional<Date>& out, std::string_view where) {
    const auto it = obj.find(std::string(key));
    if (it == obj.end() || it->is_null()) return;
    if (!it->is_string()) throw ConfigError(std::string(where) + "." + std::string(key) + ": expected a YYYY-MM-DD string");
    try {
        out = parse_date(it->get<std::string>());
    } catch (const std::exception& e) {
        throw ConfigError(std::string(where) + "." + std::string(key) + ": " + e.what());
    }
}

const json& section(const json& j, std::string_view key) {
    static const json empty = json::object();
    const auto it = j.find(std::string(key));
    if (it == j.end()) return empty;
    if (!it->is_object()) throw ConfigError("'" + std::string(key) + "' must be an object");
    return *it;
}

}  // namespace

json to_json(const RunConfig& c) {
    json j;
    j["source"] = to_string(c.source);
    j["offline"] = c.offline;
    j["seed"] = c.seed;
    j["paths"] = {{"nvd_fixture", c.paths.nvd_fixture.string()},
                  {"redhat_fixture", c.paths.redhat_fixture.string()},
                  {"cwe_fixture", c.paths.cwe_fixture.string()},
                  {"work", c.paths.work.string()},
                  {"cache", c.paths.cache_dir().string()},
                  {"graph", c.paths.graph_dir().string()},
                  {"split", c.paths.split_dir().string()},
                  {"checkpoints", c.paths.checkpoint_dir().string()},
                  {"reports", c.paths.report_dir().string()}};
    j["live"] = {{"nvd_url", c.live.nvd_url},
                 {"redhat_url", c.live.redhat_url},
                 {"cwe_url", c.live.cwe_url},
                 {"since", optional_json(date_text(c.live.since))},
                 {"max_pages", c.live.max_pages ? json(*c.live.max_pages) : json(nullptr)}};
    j["synthetic"] = {{"cves", c.synthetic.cves},
                      {"cpes", c.synthetic.cpes},
                      {"cwes", c.synthetic.cwes},
                      {"max_cpes_per_cve", c.synthetic.max_cpes_per_cve},
                      {"noise", c.synthetic.noise},
                      {"text_signal", c.synthetic.text_signal},
                      {"seed", c.synthetic.seed}};
    j["split"] = {{"mode", c.split.mode == kg::SplitMode::inductive ? "inductive" : "transductive"},
                  {"valid_fraction", c.split.valid_fraction},
                  {"test_fraction", c.split.test_fraction},
                  {"train_cutoff", optional_json(date_text(c.split.train_cutoff))},
                  {"test_cutoff", optional_json(date_text(c.split.test_cutoff))},
                  {"tasks", c.task_relations()}};
    json t = c.train;
    t.erase("seed");
    j["train"] = t;
    j["transe"] = {{"dim", c.transe.dim},
                   {"margin", c.transe.margin},
                   {"norm", c.transe.norm},
                   {"learning_rate", c.transe.learning_rate},
                   {"epochs", c.transe.epochs},
                   {"batch_size", c.transe.batch_size}};
    j["eval"] = {{"filtered", c.eval.filtered}, {"both_directions", c.eval.both_directions}, {"task", c.eval.task}, {"threads", c.eval.threads}};
    j["embeddings"] = {{"provider", fusion::to_string(c.embeddings.provider)},
                       {"base_url", c.embeddings.base_url},
                       {"model", c.embeddings.model},
                       {"batch_size", c.embeddings.batch_size}};
    return j;
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    reject_unknown_keys(j, {"source", "offline", "seed", "paths", "live", "synthetic", "split", "train", "transe", "eval", "embeddings"}, "config");
    RunConfig c;
    if (!j.contains("source")) throw ConfigError("missing required key 'source'");
    std::string source;
    read_optional(j, "source", source, "config");
    c.source = parse_data_source(source);
    read_optional(j, "offline", c.offline, "config");
    read_optional(j, "seed", c.seed, "config");

    const auto& p = section(j, "paths");
    reject_unknown_keys(p, {"nvd_fixture", "redhat_fixture", "cwe_fixture", "work", "cache", "graph", "split", "checkpoints", "reports"}, "paths");
    auto path = [&](std::string_view key, fs::path& out) {
        std::string s;
        read_optional(p, key, s, "paths");
        if (!s.empty()) out = s;
    };
    path("nvd_fixture", c.paths.nvd_fixture);
    path("redhat_fixture", c.paths.redhat_fixture);
    path("cwe_fixture", c.paths.cwe_fixture);
    path("work", c.paths.work);
    path("cache", c.paths.cache);
    path("graph", c.paths.graph);
    path("split", c.paths.split);
    path("checkpoints", c.paths.checkpoints);
    path("reports", c.paths.reports);

    const auto& l = section(j, "live");
    reject_unknown_keys(l, {"nvd_url", "redhat_url", "cwe_url", "since", "max_pages"}, "live");
    read_optional(l, "nvd_url", c.live.nvd_url, "live");
    read_optional(l, "redhat_url", c.live.redhat_url, "live");
    read_optional(l, "cwe_url", c.live.cwe_url, "live");
    read_date(l, "since", c.live.since, "live");
    if (l.contains("max_pages") && !l.at("max_pages").is_null()) {
        int n = 0;
        read_optional(l, "max_pages", n, "live");
        c.live.max_pages = n;
    }

    const auto& s = section(j, "synthetic");
    reject_unknown_keys(s, {"cves", "cpes", "cwes", "max_cpes_per_cve", "noise", "text_signal", "seed"}, "synthetic");
    read_optional(s, "cves", c.synthetic.cves, "synthetic");
    read_optional(s, "cpes", c.synthetic.cpes, "synthetic");
    read_optional(s, "cwes", c.synthetic.cwes, "synthetic");
    read_optional(s, "max_cpes_per_cve", c.synthetic.max_cpes_per_cve, "synthetic");
    read_optional(s, "noise", c.synthetic.noise, "synthetic");
    read_optional(s, "text_signal", c.synthetic.text_signal, "synthetic");
    read_optional(s, "seed", c.synthetic.seed, "synthetic");

    const auto& sp = section(j, "split");
    reject_unknown_keys(sp, {"mode", "valid_fraction", "test_fraction", "train_cutoff", "test_cutoff", "tasks"}, "split");
    std::string mode = "transductive";
    read_optional(sp, "mode", mode, "split");
    if (mode == "inductive") c.split.mode = kg::SplitMode::inductive;
    else if (mode != "transductive") throw ConfigError("split.mode must be transductive or inductive");
    read_optional(sp, "valid_fraction", c.split.valid_fraction, "split");
    read_optional(sp, "test_fraction", c.split.test_fraction, "split");
    read_date(sp, "train_cutoff", c.split.train_cutoff, "split");
    read_date(sp, "test_cutoff", c.split.test_cutoff, "split");
    read_optional(sp, "tasks", c.split.tasks, "split");

    const auto& t = section(j, "train");
    // one seed drives the whole run
    if (t.contains("seed")) throw ConfigError("unknown key 'seed' in train (set the top-level seed)");
    try {
        c.train = t.get<train::TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }

    const auto& b = section(j, "transe");
    reject_unknown_keys(b, {"dim", "margin", "norm", "learning_rate", "epochs", "batch_size"}, "transe");
    read_optional(b, "dim", c.transe.dim, "transe");
    read_optional(b, "margin", c.transe.margin, "transe");
    read_optional(b, "norm", c.transe.norm, "transe");
    read_optional(b, "learning_rate", c.transe.learning_rate, "transe");
    read_optional(b, "epochs", c.transe.epochs, "transe");
    read_optional(b, "batch_size", c.transe.batch_size, "transe");

    const auto& e = section(j, "eval");
    reject_unknown_keys(e, {"filtered", "both_directions", "task", "threads"}, "eval");
    read_optional(e, "filtered", c.eval.filtered, "eval");
    read_optional(e, "both_directions", c.eval.both_directions, "eval");
    read_optional(e, "task", c.eval.task, "eval");
    read_optional(e, "threads", c.eval.threads, "eval");

    const auto& m = section(j, "embeddings");
    reject_unknown_keys(m, {"provider", "base_url", "model", "batch_size"}, "embeddings");
    std::string provider = "local";
    read_optional(m, "provider", provider, "embeddings");
    try {
        c.embeddings.provider = fusion::parse_provider(provider);
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("embeddings.provider: ") + ex.what());
    }
    read_optional(m, "base_url", c.embeddings.base_url, "embeddings");
    read_optional(m, "model", c.embeddings.model, "embeddings");
    read_optional(m, "batch_size", c.embeddings.batch_size, "embeddings");

    c.propagate_seed();
    return c;
}

RunConfig parse_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto c = config_from_json(j);
    c.validate();
    return c;
}

std::string config_checksum(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
    return buf;
}

// --- commands ------------------------------------------------------------------

namespace {

struct Context {
    RunConfig cfg;
    std::string checksum;
    std::ostream& out;
};

std::string tag(const Context& ctx) { return "config " + ctx.checksum; }

void stamp(const Context& ctx, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "provenance", "config_checksum\t" + ctx.checksum + "\nconfig\t" + to_json(ctx.cfg).dump() + "\n");
}

ingest::Source ingest_source(DataSource s) { return s == DataSource::redhat ? ingest::Source::redhat : ingest::Source::nvd; }

void write_documents(const fs::path& file, const std::vector<ingest::RawDocument>& docs) {
    std::string text;
    for (const auto& d : docs) text += json{{"origin", d.origin}, {"body", d.body}}.dump() + "\n";
    write_file(file, text);
}

std::vector<ingest::RawDocument> read_documents(const fs::path& file) {
    if (!fs::exists(file)) throw std::runtime_error("raw cache file missing: " + file.string() + " (run ingest first)");
    std::vector<ingest::RawDocument> docs;
    std::istringstream in(read_file(file));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        docs.push_back({j.at("origin").get<std::string>(), j.at("body").get<std::string>()});
    }
    return docs;
}

fs::path raw_dir(const RunConfig& c) { return c.paths.cache_dir() / "raw"; }

int cmd_ingest(Context& ctx) {
    const auto& c = ctx.cfg;
    if (c.source == DataSource::synthetic) {
        ctx.out << "synthetic source: nothing to ingest\n";
        return 0;
    }
    ingest::FetchOptions o;
    o.source = ingest_source(c.source);
    o.mode = c.offline ? ingest::FetchMode::offline : ingest::FetchMode::live;
    o.location = c.offline ? (c.source == DataSource::nvd ? c.paths.nvd_fixture : c.paths.redhat_fixture).string()
                           : (c.source == DataSource::nvd ? c.live.nvd_url : c.live.redhat_url);
    o.since = c.live.since;
    o.max_pages = c.live.max_pages;
    o.cache_dir = c.paths.cache_dir() / "pages";
    if (const char* key = std::getenv("NVD_API_KEY")) o.api_key = key;
    const auto records = ingest::fetch_records(o);
    std::vector<ingest::RawDocument> history;
    if (c.source == DataSource::nvd) history = ingest::fetch_change_history(o);

    ingest::FetchOptions w = o;
    w.source = ingest::Source::mitre_cwe;
    w.location = c.offline ? c.paths.cwe_fixture.string() : c.live.cwe_url;
    const auto catalog = ingest::fetch_records(w);

    const auto dir = raw_dir(c);
    fs::create_directories(dir);
    write_documents(dir / "records.jsonl", records);
    write_documents(dir / "history.jsonl", history);
    write_documents(dir / "cwe.jsonl", catalog);
    stamp(ctx, dir);
    ctx.out << "ingested " << records.size() << " records, " << history.size() << " change events, " << catalog.size()
            << " catalog document(s) into " << dir.string() << "\n";
    return 0;
}

struct Corpus {
    std::vector<ingest::CveRecord> cves;
    ingest::CweCatalog catalog;
};

Corpus load_corpus(const RunConfig& c) {
    const auto dir = raw_dir(c);
    Corpus corpus;
    for (const auto& d : read_documents(dir / "records.jsonl")) corpus.cves.push_back(ingest::parse_cve_record(d, ingest_source(c.source)));
    ingest::apply_change_history(corpus.cves, read_documents(dir / "history.jsonl"));
    const auto cwe = read_documents(dir / "cwe.jsonl");
    if (cwe.empty()) throw std::runtime_error("raw cache holds no CWE catalog");
    corpus.catalog = ingest::parse_cwe_catalog(cwe.front());
    return corpus;
}

int cmd_build(Context& ctx) {
    const auto& c = ctx.cfg;
    kg::KnowledgeGraph g;
    if (c.source == DataSource::synthetic) {
        g = synth::planted_graph(c.synthetic);
    } else {
        const auto corpus = load_corpus(c);
        kg::BuildReport rep;
        g = kg::build_graph(corpus.cves, corpus.catalog, &rep);
        ctx.out << "excluded CVEs without CWE or CPE: " << rep.excluded_cves << "\ndropped CVE->CWE edges: " << rep.dropped_cwe_edges << "\n";
    }
    const auto dir = c.paths.graph_dir();
    fs::create_directories(dir);
    kg::save_graph(g, dir);
    stamp(ctx, dir);
    ctx.out << "graph: " << g.num_entities() << " entities, " << g.triples().size() << " triples, checksum " << kg::graph_checksum(g)
            << "\nwritten to " << dir.string() << "\n";
    return 0;
}

int cmd_split(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto g = kg::load_graph(c.paths.graph_dir());
    kg::DatasetSplit s;
    if (c.split.mode == kg::SplitMode::transductive) {
        s = kg::split_transductive(g, c.split.valid_fraction, c.split.test_fraction, c.seed, c.task_relations());
    } else {
        if (!c.split.train_cutoff || !c.split.test_cutoff) throw ConfigError("an inductive split needs train_cutoff and test_cutoff");
        s = kg::split_inductive(g, *c.split.train_cutoff, *c.split.test_cutoff, c.split.valid_fraction, c.split.test_fraction, c.seed,
                                c.task_relations());
    }
    const auto dir = c.paths.split_dir();
    fs::create_directories(dir);
    kg::save_split(s, g, dir);
    stamp(ctx, dir);
    ctx.out << (s.mode == kg::SplitMode::inductive ? "inductive" : "transductive") << " split: " << s.train.size() << " train, "
            << s.valid.size() << " valid, " << s.test.size() << " test";
    if (s.inference) ctx.out << ", " << s.inference->size() << " inference";
    ctx.out << "\n";
    for (const auto& w : s.warnings) ctx.out << "warning: " << w << "\n";
    return 0;
}

num::Matrix text_matrix(const RunConfig& c, const kg::KnowledgeGraph& g, const gnn::ModelConfig& model) {
    if (!model.fusion) return {};
    const auto dim = model.text_dim;
    fusion::EmbeddingCache cache(c.paths.cache_dir() / "embeddings" / ("text-" + std::to_string(dim) + ".tsv"), dim);
    std::optional<fusion::RemoteEmbedder> remote;
    if (c.embeddings.provider == fusion::Provider::remote) {
        const char* token = std::getenv(std::string(fusion::kTokenEnv).c_str());
        if (!token || !*token) {
            throw std::runtime_error("the remote embedding provider needs " + std::string(fusion::kTokenEnv) +
                                     "; set it or use embeddings.provider = \"local\"");
        }
        remote.emplace(c.embeddings.base_url, token);
        remote->model = c.embeddings.model;
        remote->batch_size = static_cast<std::size_t>(c.embeddings.batch_size);
        remote->dim = dim;
    }
    fusion::TextEmbedder embedder(c.embeddings.provider, cache, remote ? &*remote : nullptr);
    return embedder.embed_graph(g);
}

struct Prepared {
    kg::KnowledgeGraph g;
    kg::DatasetSplit split;
    kg::KnowledgeGraph g_train;
};

Prepared prepare(const RunConfig& c) {
    Prepared p;
    p.g = kg::load_graph(c.paths.graph_dir());
    p.split = kg::load_split(p.g, c.paths.split_dir());
    p.g_train = p.g.with_triples(p.split.train);
    if (c.train.inverse_augmentation) p.g_train = kg::augment_inverses(p.g_train);
    return p;
}

fs::path gnn_dir(const RunConfig& c) { return c.paths.checkpoint_dir() / "gnn"; }
fs::path transe_path(const RunConfig& c) { return c.paths.checkpoint_dir() / "transe" / "model.ckpt"; }

int cmd_train(Context& ctx, const std::string& model) {
    const auto& c = ctx.cfg;
    auto p = prepare(c);
    if (model == "transe") {
        std::vector<double> log;
        const auto params = baseline::transe_train(p.g, p.split, c.transe, &log);
        const auto path = transe_path(c);
        fs::create_directories(path.parent_path());
        baseline::save_transe(params, c.transe, kg::graph_checksum(p.g.with_triples(p.split.train)), path);
        std::string text = "# " + tag(ctx) + "\nepoch\tloss\n";
        for (std::size_t i = 0; i < log.size(); ++i) text += std::to_string(i + 1) + "\t" + std::to_string(log[i]) + "\n";
        write_file(path.parent_path() / "loss_log.tsv", text);
        stamp(ctx, path.parent_path());
        ctx.out << "TransE trained for " << log.size() << " epochs, final loss " << (log.empty() ? 0.0 : log.back()) << "\n";
        return 0;
    }
    const auto text = text_matrix(c, p.g, c.train.model);
    const auto ranking = eval::ranking_graph(p.g, p.split);
    const auto gctx = gnn::GraphContext::build(ranking, text);
    train::TrainOptions opts;
    opts.checkpoint_dir = gnn_dir(c);
    fs::create_directories(opts.checkpoint_dir);
    if (!p.split.valid.empty()) {
        opts.validate = [&](gnn::ModelParams& params) {
            eval::EvalOptions eo{c.eval.filtered, c.eval.both_directions, true, c.eval.threads};
            return eval::evaluate_split(eval::model_scorer(gctx, params), ranking, p.split, eval::Task::all, eo).per_task.at("all").mrr;
        };
    }
    opts.on_epoch = [&](int epoch, double loss) { ctx.out << "epoch " << epoch << " loss " << loss << std::endl; };
    const auto r = train::train(p.g_train, c.train, text, opts);
    stamp(ctx, opts.checkpoint_dir);
    if (r.diverged) ctx.out << "warning: training diverged; kept the last finite parameters\n";
    if (r.best_valid_mrr) ctx.out << "best validation MRR " << *r.best_valid_mrr << " at epoch " << r.best_epoch << "\n";
    ctx.out << "checkpoints in " << opts.checkpoint_dir.string() << "\n";
    return r.diverged ? 1 : 0;
}

// Scorer plus everything it borrows.
struct LoadedModel {
    std::optional<train::Checkpoint> gnn;
    std::optional<baseline::TransEParams> transe;
    std::unique_ptr<gnn::GraphContext> ctx;
    eval::Scorer scorer;
};

LoadedModel load_model(const RunConfig& c, const std::string& model, const kg::KnowledgeGraph& g, const kg::KnowledgeGraph& ranking,
                       const std::string& train_checksum, bool force) {
    LoadedModel m;
    if (model == "transe") {
        m.transe = baseline::load_transe(transe_path(c));
        const auto stored = train::read_container(transe_path(c)).graph_checksum;
        if (stored != train_checksum && !force) {
            throw train::CheckpointError("TransE checkpoint was trained on another graph (use --force to override)");
        }
        m.scorer = baseline::transe_scorer(*m.transe, ranking);
        return m;
    }
    auto path = gnn_dir(c) / "best.ckpt";
    if (!fs::exists(path)) path = gnn_dir(c) / "last.ckpt";
    m.gnn = train::load_checkpoint(path, train_checksum, force);
    const auto text = text_matrix(c, g, m.gnn->config.model);
    m.ctx = std::make_unique<gnn::GraphContext>(gnn::GraphContext::build(ranking, text));
    m.scorer = eval::model_scorer(*m.ctx, m.gnn->params);
    return m;
}

json metrics_json(const eval::Evaluation& e) {
    json j = json::object();
    for (const auto& [task, m] : e.per_task) {
        j[task] = {{"mrr", m.mrr},
                   {"hits@1", m.hits.at(1)},
                   {"hits@3", m.hits.at(3)},
                   {"hits@10", m.hits.at(10)},
                   {"queries", m.queries},
                   {"random_mrr", m.random_mrr},
                   {"random_mrr_std", m.random_mrr_std}};
    }
    return j;
}

int cmd_eval(Context& ctx, const std::string& model, bool use_valid, bool force) {
    const auto& c = ctx.cfg;
    auto p = prepare(c);
    const auto ranking = eval::ranking_graph(p.g, p.split);
    const auto checksum = model == "transe" ? kg::graph_checksum(p.g.with_triples(p.split.train)) : kg::graph_checksum(p.g_train);
    auto m = load_model(c, model, p.g, ranking, checksum, force);
    eval::EvalOptions opts{c.eval.filtered, c.eval.both_directions, use_valid, c.eval.threads};
    const auto e = eval::evaluate_split(m.scorer, ranking, p.split, eval::parse_task(c.eval.task), opts);
    const auto dir = c.paths.report_dir();
    const std::string stem = model + "_" + (use_valid ? "valid" : "test") + "_" + (c.eval.filtered ? "filtered" : "raw");
    eval::write_evaluation(e, dir / (stem + ".tsv"), tag(ctx));
    write_file(dir / (stem + ".json"), json{{"tag", tag(ctx)}, {"metrics", metrics_json(e)}}.dump(2) + "\n");
    ctx.out << eval::format_metrics(e) << "report: " << (dir / (stem + ".tsv")).string() << "\n";
    return 0;
}

std::string file_safe(std::string s) {
    for (auto& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
    return s;
}

int cmd_predict(Context& ctx, const std::string& model, const std::string& cve, const std::string& relation, int top, bool include_known,
                bool force) {
    const auto& c = ctx.cfg;
    auto p = prepare(c);
    const auto full = kg::augment_inverses(p.g);
    const auto checksum = model == "transe" ? kg::graph_checksum(p.g.with_triples(p.split.train)) : kg::graph_checksum(p.g_train);
    auto m = load_model(c, model, p.g, full, checksum, force);
    const auto rows = eval::predict_report(m.scorer, full, cve, relation, top, !include_known);
    const auto dir = c.paths.report_dir();
    const auto stem = "predict_" + file_safe(cve) + "_" + file_safe(relation);
    const auto table = eval::format_predictions(rows);
    fs::create_directories(dir);
    write_file(dir / (stem + ".txt"), "# " + tag(ctx) + "\n" + table);
    eval::write_predictions(rows, dir / (stem + ".json"), tag(ctx));
    ctx.out << table;
    return 0;
}

int cmd_stats(Context& ctx, const std::vector<int>& windows) {
    const auto& c = ctx.cfg;
    const auto g = kg::load_graph(c.paths.graph_dir());
    std::ostringstream report;
    report << "# " << tag(ctx) << "\n" << kg::format_stats(kg::graph_stats(g));
    if (c.source == DataSource::nvd && fs::exists(raw_dir(c) / "records.jsonl")) {
        const auto corpus = load_corpus(c);
        report << "\n" << kg::format_delay_report(kg::cpe_delay_report(corpus.cves, windows), windows);
        const auto missing = kg::missing_cwe_report(g, corpus.cves);
        report << "\nmissing_cwe\t" << missing.missing << "/" << missing.cves << "\t" << missing.fraction << "\nmissing_cwe_in_graph\t"
               << missing.fraction_in_graph << "\n";
    }
    const auto dir = c.paths.report_dir();
    fs::create_directories(dir);
    write_file(dir / "stats.txt", report.str());
    ctx.out << report.str();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"vulnkg: vulnerability knowledge graph construction and link prediction"};
    app.name("vulnkg");
    app.footer(std::string("\nEnvironment:\n  ") + std::string(kTokenEnvHelp) +
               "\n  NVD_API_KEY     optional NVD API key for live ingestion\n");
    std::string config_path = "vulnkg.json";
    bool offline = false;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "configuration file (JSON)");
    app.add_flag("--offline", offline, "force fixture mode (no network access)");
    app.add_option("--seed", seed, "override the configuration seed");
    app.require_subcommand(1);

    auto* ingest_cmd = app.add_subcommand("ingest", "fetch raw CVE and CWE data into the raw cache");
    std::string source, since;
    std::optional<int> max_pages;
    ingest_cmd->add_option("--source", source, "nvd, redhat or synthetic");
    ingest_cmd->add_option("--since", since, "only records modified since YYYY-MM-DD (live mode)");
    ingest_cmd->add_option("--max-pages", max_pages, "stop after this many pages (live mode)");

    auto* build_cmd = app.add_subcommand("build", "parse the raw cache and write the knowledge graph");

    auto* split_cmd = app.add_subcommand("split", "split the graph into train/valid/test");
    std::string mode, train_cutoff, test_cutoff;
    std::optional<double> valid_fraction, test_fraction;
    split_cmd->add_option("--mode", mode, "transductive or inductive")->check(CLI::IsMember({"transductive", "inductive"}));
    split_cmd->add_option("--train-cutoff", train_cutoff, "inductive: last training date YYYY-MM-DD");
    split_cmd->add_option("--test-cutoff", test_cutoff, "inductive: last evaluation date YYYY-MM-DD");
    split_cmd->add_option("--valid-fraction", valid_fraction);
    split_cmd->add_option("--test-fraction", test_fraction);

    std::string model = "gnn";
    auto* train_cmd = app.add_subcommand("train", "train the graph model or the TransE baseline");
    std::optional<int> epochs, negatives;
    std::optional<double> lr;
    std::string fusion_switch;
    train_cmd->add_option("--model", model, "gnn or transe")->check(CLI::IsMember({"gnn", "transe"}));
    train_cmd->add_option("--epochs", epochs);
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--negatives", negatives, "negatives per positive");
    train_cmd->add_option("--fusion", fusion_switch, "on or off")->check(CLI::IsMember({"on", "off"}));

    auto* eval_cmd = app.add_subcommand("eval", "rank the test (or validation) triples and write a metrics report");
    std::string task;
    bool raw = false, tails_only = false, valid = false, force = false;
    eval_cmd->add_option("--model", model, "gnn or transe")->check(CLI::IsMember({"gnn", "transe"}));
    eval_cmd->add_option("--task", task, "cve_cwe, cve_cpe or all");
    eval_cmd->add_flag("--raw", raw, "unfiltered ranking");
    eval_cmd->add_flag("--tails-only", tails_only, "skip head queries");
    eval_cmd->add_flag("--valid", valid, "rank the validation triples");
    eval_cmd->add_flag("--force", force, "accept a checkpoint trained on another graph");

    auto* predict_cmd = app.add_subcommand("predict", "rank candidate CWEs or CPEs for one CVE");
    std::string cve, relation = std::string(kg::kMatchingCve);
    int top = 10;
    bool include_known = false;
    predict_cmd->add_option("--model", model, "gnn or transe")->check(CLI::IsMember({"gnn", "transe"}));
    predict_cmd->add_option("--cve", cve, "CVE identifier")->required();
    predict_cmd->add_option("--relation", relation, "relation to complete, e.g. matchingCVE or matchingCWE");
    predict_cmd->add_option("--top", top, "number of rows");
    predict_cmd->add_flag("--include-known", include_known, "keep links already in the graph");
    predict_cmd->add_flag("--force", force, "accept a checkpoint trained on another graph");

    auto* stats_cmd = app.add_subcommand("stats", "graph statistics and CPE delay analysis");
    std::vector<int> windows{1, 7, 30, 180};
    stats_cmd->add_option("--windows", windows, "delay windows in days")->delimiter(',');

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        auto cfg = parse_config(config_path);
        if (offline) cfg.offline = true;
        if (seed) cfg.seed = *seed;
        if (!source.empty()) cfg.source = parse_data_source(source);
        if (!since.empty()) cfg.live.since = parse_date(since);
        if (max_pages) cfg.live.max_pages = *max_pages;
        if (!mode.empty()) cfg.split.mode = mode == "inductive" ? kg::SplitMode::inductive : kg::SplitMode::transductive;
        if (!train_cutoff.empty()) cfg.split.train_cutoff = parse_date(train_cutoff);
        if (!test_cutoff.empty()) cfg.split.test_cutoff = parse_date(test_cutoff);
        if (valid_fraction) cfg.split.valid_fraction = *valid_fraction;
        if (test_fraction) cfg.split.test_fraction = *test_fraction;
        if (epochs) cfg.train.epochs = cfg.transe.epochs = *epochs;
        if (lr) cfg.train.learning_rate = *lr;
        if (negatives) cfg.train.negatives = *negatives;
        if (!fusion_switch.empty()) cfg.train.model.fusion = fusion_switch == "on";
        if (!task.empty()) cfg.eval.task = task;
        if (raw) cfg.eval.filtered = false;
        if (tails_only) cfg.eval.both_directions = false;
        cfg.propagate_seed();
        cfg.validate();

        Context ctx{cfg, config_checksum(cfg), out};
        out << "config checksum " << ctx.checksum << "\n";
        if (ingest_cmd->parsed()) return cmd_ingest(ctx);
        if (build_cmd->parsed()) return cmd_build(ctx);
        if (split_cmd->parsed()) return cmd_split(ctx);
        if (train_cmd->parsed()) return cmd_train(ctx, model);
        if (eval_cmd->parsed()) return cmd_eval(ctx, model, valid, force);
        if (predict_cmd->parsed()) return cmd_predict(ctx, model, cve, relation, top, include_known, force);
        if (stats_cmd->parsed()) return cmd_stats(ctx, windows);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace vulnkg::cli
