#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"
#include "rporag/eval.hpp"
#include "rporag/io.hpp"
#include "rporag/kg.hpp"
#include "rporag/preference.hpp"
#include "rporag/prompt.hpp"
#include "rporag/remote_embedder.hpp"
#include "rporag/retriever.hpp"
#include "rporag/sampler.hpp"
#include "rporag/type_predictor.hpp"

namespace rporag::pipeline {

namespace fs = std::filesystem;

// Output file names inside the output directory.
inline constexpr const char* kSampledFile = "sampled.jsonl";
inline constexpr const char* kRetrievalFile = "retrieval.jsonl";
inline constexpr const char* kTypeModelFile = "type_model.txt";
inline constexpr const char* kPreferenceFile = "preferences.jsonl";
inline constexpr const char* kTrainerConfigFile = "trainer_config.json";
inline constexpr const char* kPromptFile = "prompts.jsonl";
inline constexpr const char* kSftFile = "sft.jsonl";
inline constexpr const char* kReportFile = "eval_report.json";

// Flat `dotted.key = value` settings; '#' starts a comment line.
class Config {
public:
    static Config parse(std::istream& in, const std::string& source = "<config>", fs::path base_dir = {}) {
        Config c;
        c.base_dir_ = std::move(base_dir);
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line)) {
            ++number;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
            auto key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
            c.set(key, trim(line.substr(eq + 1)));
        }
        return c;
    }

    static Config load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        return parse(in, path.string(), path.parent_path());
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    // "key=value" as given on the command line.
    void set_assignment(const std::string& assignment) {
        auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    const fs::path& base_dir() const noexcept { return base_dir_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    template <class T>
    T get_number(const std::string& key, T fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const auto& s = it->second;
        T value{};
        if constexpr (std::is_floating_point_v<T>) {
            if (s == "inf" || s == "+inf") return std::numeric_limits<T>::infinity();
            try {
                std::size_t used = 0;
                value = static_cast<T>(std::stod(s, &used));
                if (used != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw ConfigError("config key " + key + " expects a number, got '" + s + "'");
            }
        } else {
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
            if (ec != std::errc() || ptr != s.data() + s.size())
                throw ConfigError("config key " + key + " expects an integer, got '" + s + "'");
        }
        return value;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw ConfigError("config key " + key + " expects a boolean, got '" + it->second + "'");
    }

    std::optional<fs::path> get_path(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) return std::nullopt;
        fs::path p(it->second);
        return p.is_absolute() ? p : base_dir_ / p;
    }

private:
    static std::string trim(const std::string& s) {
        auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return {};
        auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
    fs::path base_dir_;
};

enum class EmbedderKind { kDeterministic, kRemote };

struct PipelineConfig {
    fs::path triples;
    std::optional<fs::path> types;
    fs::path qa;
    std::optional<fs::path> prompt_template;
    std::optional<fs::path> gold_relations;
    std::optional<fs::path> predictions;
    fs::path out_dir;

    std::uint64_t seed = 42;
    std::size_t workers = 1;
    bool allow_inverse = false;

    EmbedderKind embedder = EmbedderKind::kDeterministic;
    std::size_t embedding_dimension = 256;
    std::uint64_t embedder_seed = 42;
    std::string endpoint;
    std::chrono::milliseconds timeout{30'000};
    std::size_t remote_batch = 64;

    SamplerConfig sampler;
    BeamConfig beam;
    bool type_filter = true;
    std::size_t type_top_k = 5;
    TypeTrainConfig type;
    PreferenceHyper preference;
    RenderConfig render;
    Averaging averaging = Averaging::kMacro;

    fs::path output(const char* name) const { return out_dir / name; }
};

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "kg.triples", "kg.types", "kg.allow_inverse", "qa.file", "out.dir", "seed", "workers",
        "embedder.kind", "embedder.dimension", "embedder.seed", "embedder.endpoint", "embedder.timeout_ms",
        "embedder.batch_size", "sampler.k_max", "sampler.elbow", "sampler.minibatch_cutoff", "sampler.path_cap",
        "sampler.restarts", "retriever.beam_init", "retriever.gap_threshold", "retriever.max_hops",
        "retriever.type_filter", "retriever.type_top_k", "type.hidden", "type.lr", "type.epochs", "type.batch",
        "type.negatives", "pref.alpha", "pref.beta", "pref.gamma", "pref.max_negatives", "prompt.template",
        "prompt.max_groups", "prompt.max_paths", "eval.gold_relations", "eval.predictions", "eval.averaging"};
    return keys;
}

inline PipelineConfig resolve(const Config& c) {
    for (const auto& [key, value] : c.values())
        if (!known_keys().contains(key)) throw ConfigError("unknown config key: " + key);

    PipelineConfig p;
    auto required_path = [&](const std::string& key) {
        auto path = c.get_path(key);
        if (!path) throw ConfigError("missing required config key " + key);
        return *path;
    };
    p.triples = required_path("kg.triples");
    p.types = c.get_path("kg.types");
    p.qa = required_path("qa.file");
    p.out_dir = required_path("out.dir");
    p.prompt_template = c.get_path("prompt.template");
    p.gold_relations = c.get_path("eval.gold_relations");
    p.predictions = c.get_path("eval.predictions");

    p.seed = c.get_number<std::uint64_t>("seed", 42);
    p.workers = c.get_number<std::size_t>("workers", std::max(1u, std::thread::hardware_concurrency()));
    p.allow_inverse = c.get_bool("kg.allow_inverse", false);

    auto kind = c.get_string("embedder.kind", "deterministic");
    if (kind == "deterministic") p.embedder = EmbedderKind::kDeterministic;
    else if (kind == "remote") p.embedder = EmbedderKind::kRemote;
    else throw ConfigError("embedder.kind must be deterministic or remote");
    p.embedding_dimension = c.get_number<std::size_t>("embedder.dimension", 256);
    p.embedder_seed = c.get_number<std::uint64_t>("embedder.seed", p.seed);
    p.endpoint = c.get_string("embedder.endpoint", "");
    p.timeout = std::chrono::milliseconds(c.get_number<std::int64_t>("embedder.timeout_ms", 30'000));
    p.remote_batch = c.get_number<std::size_t>("embedder.batch_size", 64);

    p.sampler.cluster.seed = p.seed;
    p.sampler.cluster.k_max = c.get_number<std::size_t>("sampler.k_max", 10);
    p.sampler.cluster.minibatch_cutoff = c.get_number<std::size_t>("sampler.minibatch_cutoff", 1500);
    p.sampler.cluster.restarts = c.get_number<std::size_t>("sampler.restarts", 10);
    p.sampler.path_cap = c.get_number<std::size_t>("sampler.path_cap", kDefaultPathCap);
    p.sampler.allow_inverse = p.allow_inverse;
    auto elbow = c.get_string("sampler.elbow", "largest_drop");
    if (elbow == "largest_drop") p.sampler.cluster.elbow = ElbowRule::kLargestDrop;
    else if (elbow == "max_curvature") p.sampler.cluster.elbow = ElbowRule::kMaxCurvature;
    else throw ConfigError("sampler.elbow must be largest_drop or max_curvature");

    p.beam.beam_init = c.get_number<std::size_t>("retriever.beam_init", 10);
    p.beam.gap_threshold = c.get_number<double>("retriever.gap_threshold", 0.3);
    p.beam.max_hops = c.get_number<std::size_t>("retriever.max_hops", 2);
    p.beam.allow_inverse = p.allow_inverse;
    p.type_filter = c.get_bool("retriever.type_filter", true);
    p.type_top_k = c.get_number<std::size_t>("retriever.type_top_k", 5);

    p.type.seed = p.seed;
    p.type.hidden = c.get_number<std::size_t>("type.hidden", 64);
    p.type.learning_rate = c.get_number<double>("type.lr", 0.05);
    p.type.epochs = c.get_number<std::size_t>("type.epochs", 30);
    p.type.batch_size = c.get_number<std::size_t>("type.batch", 32);
    p.type.negatives_per_positive = c.get_number<std::size_t>("type.negatives", 4);

    p.preference.alpha = c.get_number<double>("pref.alpha", 1.0);
    p.preference.beta = c.get_number<double>("pref.beta", 1.0);
    p.preference.gamma = c.get_number<double>("pref.gamma", 0.3);
    p.preference.max_negatives = c.get_number<std::size_t>("pref.max_negatives", 8);

    p.render.max_groups = c.get_number<std::size_t>("prompt.max_groups", 20);
    p.render.max_paths_per_group = c.get_number<std::size_t>("prompt.max_paths", 10);

    auto averaging = c.get_string("eval.averaging", "macro");
    if (averaging == "macro") p.averaging = Averaging::kMacro;
    else if (averaging == "micro") p.averaging = Averaging::kMicro;
    else throw ConfigError("eval.averaging must be macro or micro");

    if (p.workers == 0) throw ConfigError("workers must be >= 1");
    if (p.embedding_dimension < 8) throw ConfigError("embedder.dimension must be >= 8");
    if (p.embedder == EmbedderKind::kRemote && p.endpoint.empty())
        throw ConfigError("embedder.endpoint is required for the remote embedder");
    if (p.remote_batch == 0 || p.remote_batch > 256) throw ConfigError("embedder.batch_size must be in 1..256");
    if (p.sampler.cluster.k_max == 0) throw ConfigError("sampler.k_max must be >= 1");
    if (p.sampler.path_cap == 0) throw ConfigError("sampler.path_cap must be >= 1");
    if (p.beam.beam_init == 0) throw ConfigError("retriever.beam_init must be >= 1");
    if (!(p.beam.gap_threshold >= 0.0)) throw ConfigError("retriever.gap_threshold must be >= 0");
    if (p.beam.max_hops == 0) throw ConfigError("retriever.max_hops must be >= 1");
    if (p.type_top_k == 0) throw ConfigError("retriever.type_top_k must be >= 1");
    if (p.type.hidden == 0 || p.type.batch_size == 0) throw ConfigError("type.hidden and type.batch must be >= 1");
    if (!(p.type.learning_rate > 0.0)) throw ConfigError("type.lr must be > 0");
    try {
        p.preference.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("pref: ") + e.what());
    }
    return p;
}

inline std::unique_ptr<Embedder> make_embedder(const PipelineConfig& p) {
    if (p.embedder == EmbedderKind::kRemote)
        return std::make_unique<RemoteEmbedder>(p.endpoint, p.embedding_dimension, p.timeout, p.remote_batch);
    return std::make_unique<DeterministicEmbedder>(p.embedding_dimension, p.embedder_seed);
}

// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

struct QaRecord {
    std::string id;
    std::string question;
    std::vector<std::string> topics;
    std::vector<std::string> answers;
};

inline std::vector<QaRecord> load_qa(const fs::path& path) {
    std::vector<QaRecord> out;
    std::set<std::string> ids;
    for (const auto& j : read_jsonl(path)) {
        try {
            QaRecord r{j.at("id").get<std::string>(), j.at("question").get<std::string>(),
                       j.at("topic_entities").get<std::vector<std::string>>(),
                       j.at("answers").get<std::vector<std::string>>()};
            if (!ids.insert(r.id).second) throw ConsistencyError("duplicate QA id " + r.id);
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), out.size() + 1, std::string("bad QA record: ") + e.what());
        }
    }
    return out;
}

inline KnowledgeGraph load_graph(const PipelineConfig& p) {
    auto in = open_input(p.triples);
    auto g = load_triples(in, p.triples.string());
    if (p.types) {
        auto tin = open_input(*p.types);
        load_type_schema(g, tin, p.types->string());
    }
    return g;
}

inline void require_inputs(const PipelineConfig& p) {
    for (const auto& path : {p.triples, p.qa})
        if (!fs::is_regular_file(path)) throw Error("missing input file " + path.string());
    if (p.types && !fs::is_regular_file(*p.types)) throw Error("missing input file " + p.types->string());
}

inline fs::path require_artifact(const PipelineConfig& p, const char* name, const std::string& stage) {
    auto path = p.output(name);
    if (!fs::is_regular_file(path))
        throw DependencyError(stage, "missing " + path.string() + ": run `" + stage + "` first");
    return path;
}

inline void prepare_out_dir(const PipelineConfig& p) {
    std::error_code ec;
    fs::create_directories(p.out_dir, ec);
    if (ec) throw WriteError("cannot create output directory " + p.out_dir.string());
}

using Summary = nlohmann::ordered_json;

// ---- sample ---------------------------------------------------------------

inline Summary run_sample(const PipelineConfig& p) {
    require_inputs(p);
    auto g = load_graph(p);
    auto qa = load_qa(p.qa);
    auto embedder = make_embedder(p);

    std::vector<std::vector<nlohmann::ordered_json>> records(qa.size());
    std::vector<std::size_t> unreachable(qa.size(), 0), pairs(qa.size(), 0);
    parallel_for(qa.size(), p.workers, [&](std::size_t qi) {
        const auto& q = qa[qi];
        for (const auto& topic : q.topics) {
            for (const auto& answer : q.answers) {
                ++pairs[qi];
                auto t = g.find_entity(topic);
                auto a = g.find_entity(answer);
                if (!t || !a) {
                    spdlog::warn("{}: entity not in graph ({} -> {})", q.id, topic, answer);
                    ++unreachable[qi];
                    continue;
                }
                auto s = sample_query(g, q.question, *t, *a, *embedder, p.sampler);
                if (s.training.unreachable) {
                    ++unreachable[qi];
                    continue;
                }
                nlohmann::ordered_json rec{{"id", q.id}, {"question", q.question}, {"topic", topic}, {"answer", answer}};
                auto paths = nlohmann::ordered_json::array();
                for (const auto& path : s.training.paths) paths.push_back(serialize_path(g, path));
                rec["paths"] = paths;
                rec["similarities"] = s.training.similarities;
                rec["chosen_k"] = s.clusters.chosen_k;
                rec["representative"] = *s.clusters.representative;
                auto candidates = nlohmann::ordered_json::array();
                for (std::size_t i = 0; i < s.candidates.size(); ++i) {
                    auto rels = nlohmann::ordered_json::array();
                    for (auto h : s.candidates[i].relations) rels.push_back(g.label(h));
                    candidates.push_back({{"text", s.candidate_texts[i]},
                                          {"relations", rels},
                                          {"cluster", s.clusters.assignments[i]}});
                }
                rec["candidates"] = candidates;
                records[qi].push_back(std::move(rec));
            }
        }
    });

    std::size_t total_records = 0, total_unreachable = 0, total_pairs = 0;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        total_records += records[i].size();
        total_unreachable += unreachable[i];
        total_pairs += pairs[i];
    }
    prepare_out_dir(p);
    write_atomically(p.output(kSampledFile), [&](std::ostream& out) {
        for (const auto& per_question : records)
            for (const auto& r : per_question) out << r.dump() << '\n';
    });
    return Summary{{"stage", "sample"},
                   {"questions", qa.size()},
                   {"pairs", total_pairs},
                   {"records", total_records},
                   {"unreachable", total_unreachable}};
}

// ---- retrieve -------------------------------------------------------------

inline nlohmann::ordered_json retrieval_record(const KnowledgeGraph& g, const QaRecord& q,
                                               const RetrievalResult& r) {
    auto paths = nlohmann::ordered_json::array();
    for (const auto& sp : r.paths) {
        auto rels = nlohmann::ordered_json::array();
        for (auto h : sp.path.relations) rels.push_back(g.label(h));
        auto mids = nlohmann::ordered_json::array();
        for (auto e : sp.path.intermediates) mids.push_back(g.label(e));
        paths.push_back({{"text", serialize_path(g, sp.path)},
                         {"score", sp.score},
                         {"terminal", g.label(sp.path.terminal)},
                         {"topic", g.label(sp.path.topic)},
                         {"relations", rels},
                         {"intermediates", mids}});
    }
    return {{"id", q.id}, {"question", q.question}, {"paths", paths}, {"arp", r.path_count()}};
}

// Rebuilds a RetrievalResult from the structured fields of a retrieval record.
inline RetrievalResult parse_retrieval_record(const KnowledgeGraph& g, const nlohmann::json& rec) {
    RetrievalResult r;
    std::set<std::string> topics;
    for (const auto& jp : rec.at("paths")) {
        ScoredPath sp;
        sp.score = jp.at("score").get<double>();
        sp.path.topic = g.entity(jp.at("topic").get<std::string>());
        sp.path.terminal = g.entity(jp.at("terminal").get<std::string>());
        for (const auto& label : jp.at("relations")) sp.path.relations.push_back(g.hop(label.get<std::string>()));
        for (const auto& label : jp.at("intermediates"))
            sp.path.intermediates.push_back(g.entity(label.get<std::string>()));
        topics.insert(jp.at("topic").get<std::string>());
        r.paths.push_back(std::move(sp));
    }
    r.topic_count = topics.size();
    sort_scored_paths(r.paths);
    return r;
}

inline Summary run_retrieve(const PipelineConfig& p) {
    require_inputs(p);
    auto g = load_graph(p);
    auto qa = load_qa(p.qa);
    auto embedder = make_embedder(p);

    std::vector<nlohmann::ordered_json> records(qa.size());
    std::vector<std::size_t> counts(qa.size(), 0);
    parallel_for(qa.size(), p.workers, [&](std::size_t qi) {
        const auto& q = qa[qi];
        std::vector<EntityId> topics;
        for (const auto& t : q.topics) {
            if (auto id = g.find_entity(t)) topics.push_back(*id);
            else spdlog::warn("{}: topic entity {} not in graph", q.id, t);
        }
        auto result = dynamic_beam_search(g, q.question, topics, *embedder, p.beam);
        counts[qi] = result.path_count();
        records[qi] = retrieval_record(g, q, result);
    });

    prepare_out_dir(p);
    write_atomically(p.output(kRetrievalFile), [&](std::ostream& out) {
        for (const auto& r : records) out << r.dump() << '\n';
    });
    return Summary{{"stage", "retrieve"},
                   {"questions", qa.size()},
                   {"paths", std::accumulate(counts.begin(), counts.end(), std::size_t{0})},
                   {"arp", qa.empty() ? 0.0 : arp(counts)}};
}

// ---- type-train -----------------------------------------------------------

inline std::vector<TypeLabel> all_types(const KnowledgeGraph& g) {
    std::vector<TypeLabel> out;
    for (std::uint32_t i = 0; i < g.type_count(); ++i) out.push_back({TypeId{i}, g.label(TypeId{i})});
    return out;
}

// Every schema type per question, labeled 1 when an answer entity carries it.
// Questions without typed answers are skipped.
inline std::vector<TypeTrainingExample> type_training_set(const KnowledgeGraph& g, const std::vector<QaRecord>& qa) {
    auto types = all_types(g);
    std::vector<TypeTrainingExample> out;
    for (const auto& q : qa) {
        std::set<TypeId> positive;
        for (const auto& a : q.answers)
            if (auto id = g.find_entity(a))
                for (auto t : g.types_of(*id)) positive.insert(t);
        if (positive.empty()) continue;
        for (const auto& t : types) out.push_back({q.question, t, positive.contains(t.id) ? 1 : 0});
    }
    return out;
}

inline Summary run_type_train(const PipelineConfig& p) {
    require_inputs(p);
    auto g = load_graph(p);
    auto qa = load_qa(p.qa);
    auto embedder = make_embedder(p);
    auto dataset = type_training_set(g, qa);
    auto model = train_type_predictor(dataset, *embedder, p.type);
    prepare_out_dir(p);
    write_atomically(p.output(kTypeModelFile), [&](std::ostream& out) { save_type_model(model, out); });
    std::size_t positives = 0;
    for (const auto& ex : dataset) positives += ex.label;
    return Summary{{"stage", "type-train"},
                   {"examples", dataset.size()},
                   {"positives", positives},
                   {"final_loss", model.final_loss}};
}

// ---- build-prefs ----------------------------------------------------------

inline PreferenceSource preference_source_from_record(const nlohmann::json& rec) {
    PreferenceSource src;
    src.id = rec.at("id").get<std::string>();
    src.question = rec.at("question").get<std::string>();
    src.topic = rec.at("topic").get<std::string>();
    src.cluster_count = rec.at("chosen_k").get<std::size_t>();
    src.representative = rec.at("representative").get<std::size_t>();
    for (const auto& c : rec.at("candidates"))
        src.candidates.push_back({c.at("relations").get<std::vector<std::string>>(), c.at("text").get<std::string>(),
                                  c.at("cluster").get<std::size_t>()});
    return src;
}

inline Summary run_build_prefs(const PipelineConfig& p) {
    auto sampled_path = require_artifact(p, kSampledFile, "sample");
    auto sampled = read_jsonl(sampled_path);
    auto embedder = make_embedder(p);

    std::vector<std::vector<PreferencePair>> per_record(sampled.size());
    parallel_for(sampled.size(), p.workers, [&](std::size_t i) {
        per_record[i] = build_preference_pairs(preference_source_from_record(sampled[i]), *embedder, p.preference);
    });
    // Union over the (topic, answer) records of a question.
    std::vector<PreferencePair> pairs;
    std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
    for (auto& recs : per_record)
        for (auto& pair : recs)
            if (seen.emplace(pair.id, pair.current_path, pair.chosen, pair.rejected).second)
                pairs.push_back(std::move(pair));

    prepare_out_dir(p);
    write_atomically(p.output(kPreferenceFile), [&](std::ostream& out) { export_preference_records(pairs, out); });
    write_atomically(p.output(kTrainerConfigFile),
                     [&](std::ostream& out) { out << trainer_config(p.preference).dump(2) << '\n'; });
    std::size_t stop_pairs = 0;
    for (const auto& pair : pairs) stop_pairs += pair.chosen == kStopResponse ? 1 : 0;
    return Summary{{"stage", "build-prefs"},
                   {"sampled_records", sampled.size()},
                   {"pairs", pairs.size()},
                   {"stop_pairs", stop_pairs}};
}

// ---- build-prompts --------------------------------------------------------

inline PromptTemplate load_template(const PipelineConfig& p) {
    if (!p.prompt_template) return PromptTemplate();
    auto in = open_input(*p.prompt_template);
    return PromptTemplate::load(in);
}

inline Summary run_build_prompts(const PipelineConfig& p) {
    require_inputs(p);
    auto retrieval_path = require_artifact(p, kRetrievalFile, "retrieve");
    std::optional<TypePredictorModel> model;
    if (p.type_filter) {
        auto model_path = require_artifact(p, kTypeModelFile, "type-train");
        auto in = open_input(model_path);
        model = load_type_model(in);
    }
    auto g = load_graph(p);
    auto qa = load_qa(p.qa);
    auto retrieval = read_jsonl(retrieval_path);
    auto tmpl = load_template(p);
    auto embedder = make_embedder(p);
    auto types = all_types(g);

    std::map<std::string, std::vector<std::string>> gold;
    for (const auto& q : qa) gold[q.id] = q.answers;

    std::vector<AnswerCenteredPrompt> prompts(retrieval.size());
    std::vector<std::size_t> dropped(retrieval.size(), 0);
    parallel_for(retrieval.size(), p.workers, [&](std::size_t i) {
        const auto& rec = retrieval[i];
        auto result = parse_retrieval_record(g, rec);
        auto question = rec.at("question").get<std::string>();
        if (model && !types.empty()) {
            std::vector<TypeId> predicted;
            for (const auto& t : predict_topk_types(*model, question, types, p.type_top_k, *embedder))
                predicted.push_back(t.id);
            auto filtered = filter_by_types(result, predicted, g);
            dropped[i] = result.path_count() - filtered.path_count();
            result = std::move(filtered);
        }
        prompts[i] = build_prompt(rec.at("id").get<std::string>(), question, result, g, tmpl, p.render);
    });

    prepare_out_dir(p);
    write_atomically(p.output(kPromptFile), [&](std::ostream& out) {
        for (const auto& pr : prompts) {
            auto candidates = nlohmann::ordered_json::array();
            for (const auto& grp : pr.groups) candidates.push_back(g.label(grp.candidate));
            nlohmann::ordered_json rec{
                {"id", pr.id}, {"question", pr.question}, {"prompt", pr.text}, {"candidates", candidates}};
            out << rec.dump() << '\n';
        }
    });
    std::size_t records = 0;
    write_atomically(p.output(kSftFile), [&](std::ostream& out) { records = export_sft_records(prompts, gold, out); });
    return Summary{{"stage", "build-prompts"},
                   {"prompts", prompts.size()},
                   {"sft_records", records},
                   {"type_filtered_paths", std::accumulate(dropped.begin(), dropped.end(), std::size_t{0})}};
}

// ---- eval -----------------------------------------------------------------

inline RelationSets load_relation_sets(const fs::path& path) {
    RelationSets out;
    for (const auto& j : read_jsonl(path)) {
        auto rels = j.at("relations").get<std::vector<std::string>>();
        out[j.at("id").get<std::string>()] = std::set<std::string>(rels.begin(), rels.end());
    }
    return out;
}

inline EvalReport evaluate(const PipelineConfig& p, const std::vector<nlohmann::json>& retrieval,
                           const std::vector<nlohmann::json>& sampled, const std::vector<QaRecord>& qa,
                           const Embedder& embedder) {
    std::map<std::string, const QaRecord*> by_id;
    for (const auto& q : qa) by_id[q.id] = &q;
    auto gold_of = [&](const std::string& id) -> const QaRecord& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ConsistencyError("record id " + id + " not in QA file");
        return *it->second;
    };

    EvalReport report;
    report.averaging = p.averaging == Averaging::kMacro ? "macro" : "micro";

    std::vector<PredictionRecord> retrieved_sets, predictions;
    std::vector<std::size_t> counts;
    for (const auto& rec : retrieval) {
        auto id = rec.at("id").get<std::string>();
        const auto& q = gold_of(id);
        PredictionRecord all{id, {}, q.answers};
        PredictionRecord top{id, {}, q.answers};
        const auto& paths = rec.at("paths");
        for (const auto& jp : paths) all.predicted.push_back(jp.at("terminal").get<std::string>());
        if (!paths.empty()) top.predicted.push_back(paths.front().at("terminal").get<std::string>());
        counts.push_back(paths.size());
        retrieved_sets.push_back(std::move(all));
        predictions.push_back(std::move(top));
    }
    report.retrieval_accuracy = summarize_answers(retrieved_sets).hit;
    report.arp = counts.empty() ? 0.0 : arp(counts);

    if (p.predictions) {
        predictions.clear();
        for (const auto& j : read_jsonl(*p.predictions)) {
            auto id = j.at("id").get<std::string>();
            predictions.push_back({id, j.at("predictions").get<std::vector<std::string>>(), gold_of(id).answers});
        }
        report.prediction_source = "predictions";
    } else {
        report.prediction_source = "top_retrieved_terminal";
    }
    report.answers = summarize_answers(predictions);

    // Sampled paths and relations per question, unioned over (topic, answer) records.
    std::map<std::string, std::vector<std::string>> sampled_paths;
    std::map<std::string, std::string> sampled_questions;
    RelationSets sampled_relations;
    for (const auto& rec : sampled) {
        auto id = rec.at("id").get<std::string>();
        sampled_questions[id] = rec.at("question").get<std::string>();
        auto& texts = sampled_paths[id];
        auto representative = rec.at("representative").get<std::size_t>();
        for (const auto& c : rec.at("candidates")) {
            if (c.at("cluster").get<std::size_t>() != representative) continue;
            auto text = c.at("text").get<std::string>();
            if (std::find(texts.begin(), texts.end(), text) == texts.end()) texts.push_back(text);
            for (const auto& r : c.at("relations")) sampled_relations[id].insert(r.get<std::string>());
        }
    }
    std::vector<std::string> questions;
    std::vector<std::vector<std::string>> candidates;
    for (const auto& [id, texts] : sampled_paths) {
        questions.push_back(sampled_questions[id]);
        candidates.push_back(texts);
    }
    report.alignment_top1 = alignment_report(questions, candidates, embedder, 1);
    report.alignment_top3 = alignment_report(questions, candidates, embedder, 3);

    if (p.gold_relations) {
        auto gold = load_relation_sets(*p.gold_relations);
        for (const auto& [id, rels] : sampled_relations)
            if (!gold.contains(id)) throw ConsistencyError("sampled question " + id + " has no gold relations");
        RelationSets dataset;
        for (const auto& [id, rels] : gold) dataset[id] = sampled_relations[id];
        if (!gold.empty()) report.coverage = relation_coverage(dataset, gold, p.averaging);
    }
    return report;
}

inline Summary run_eval(const PipelineConfig& p) {
    require_inputs(p);
    auto retrieval_path = require_artifact(p, kRetrievalFile, "retrieve");
    auto sampled_path = require_artifact(p, kSampledFile, "sample");
    if (p.predictions && !fs::is_regular_file(*p.predictions))
        throw Error("missing predictions file " + p.predictions->string());
    if (p.gold_relations && !fs::is_regular_file(*p.gold_relations))
        throw Error("missing gold relations file " + p.gold_relations->string());
    auto qa = load_qa(p.qa);
    auto embedder = make_embedder(p);
    auto report = evaluate(p, read_jsonl(retrieval_path), read_jsonl(sampled_path), qa, *embedder);
    auto j = to_json(report);
    prepare_out_dir(p);
    write_atomically(p.output(kReportFile), [&](std::ostream& out) { out << j.dump(2) << '\n'; });
    return Summary{{"stage", "eval"}, {"report", j}};
}

}  // namespace rporag::pipeline
