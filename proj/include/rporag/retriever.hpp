#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rporag/embedding.hpp"
#include "rporag/kg.hpp"

namespace rporag {

// q^(t): the question together with the relation prefix chosen so far.
struct QueryState {
    std::string question;
    EntityId topic;
    std::vector<Hop> relations;
    std::size_t step = 0;
    std::string text;  // "question [SEP] topic → r1 → ... → rt"
    EmbeddingVector embedding;
};

inline QueryState make_query_state(const KnowledgeGraph& g, const std::string& question, EntityId topic,
                                   std::vector<Hop> relations, const Embedder& embedder) {
    QueryState s;
    s.question = question;
    s.topic = topic;
    s.step = relations.size();
    s.relations = std::move(relations);
    s.text = question + " [SEP] " + serialize_prefix(g, topic, s.relations);
    s.embedding = embedder.embed(s.text);
    return s;
}

// s(q^(t), x) for an arbitrary continuation text x.
inline double score_continuation(const QueryState& state, std::string_view continuation, const Embedder& embedder) {
    return cosine(state.embedding, embedder.embed(continuation));
}

// Relations are scored by their label; the virtual END relation by the literal "END".
inline double score_relation(const KnowledgeGraph& g, const QueryState& state, Hop relation,
                             const Embedder& embedder) {
    return score_continuation(state, g.label(relation), embedder);
}

inline double score_end(const QueryState& state, const Embedder& embedder) {
    return score_continuation(state, kEndRelation, embedder);
}

// p(r | q^(t)) = 1 / (1 + exp(s_end - s_r)).
inline double expansion_probability(double s_r, double s_end) {
    return 1.0 / (1.0 + std::exp(s_end - s_r));
}

// log p(r | q^(t)) without cancellation.
inline double expansion_log_probability(double s_r, double s_end) {
    double x = s_r - s_end;
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

struct BeamConfig {
    std::size_t beam_init = 10;
    double gap_threshold = 0.3;  // on raw cosine scores; +inf disables pruning
    std::size_t max_hops = 2;
    bool allow_inverse = false;
    std::size_t max_paths_per_entry = 10'000;
};

struct ScoredPath {
    Path path;
    double score = 0.0;  // sum of log expansion probabilities, final END included
};

struct RetrievalResult {
    std::vector<ScoredPath> paths;  // score descending
    std::size_t topic_count = 0;
    std::size_t expanded_states = 0;

    std::size_t path_count() const noexcept { return paths.size(); }
};

// Score descending, then relation ids, then terminal id.
inline void sort_scored_paths(std::vector<ScoredPath>& paths) {
    std::sort(paths.begin(), paths.end(), [](const ScoredPath& a, const ScoredPath& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.path.relations != b.path.relations) return a.path.relations < b.path.relations;
        if (a.path.terminal != b.path.terminal) return a.path.terminal < b.path.terminal;
        if (a.path.topic != b.path.topic) return a.path.topic < b.path.topic;
        return a.path.intermediates < b.path.intermediates;
    });
}

namespace detail {

struct BeamEntry {
    std::vector<Hop> relations;
    std::vector<std::vector<EntityId>> instances;  // concrete node sequences, topic first
    double score = 0.0;
};

struct Candidate {
    std::optional<Hop> hop;  // nullopt = END
    double score = 0.0;
};

inline Path to_path(const std::vector<Hop>& relations, const std::vector<EntityId>& nodes) {
    Path p;
    p.topic = nodes.front();
    p.relations = relations;
    p.intermediates.assign(nodes.begin() + 1, nodes.end() - 1);
    p.terminal = nodes.back();
    return p;
}

}  // namespace detail

// Expands relation prefixes from every topic entity. Each state scores all
// frontier relations plus END, keeps the top `beam_init` whose cosine score is
// within `gap_threshold` of that state's best, and terminates on END or at
// `max_hops`. Returns every terminated path.
inline RetrievalResult dynamic_beam_search(const KnowledgeGraph& g, const std::string& question,
                                           const std::vector<EntityId>& topics, const Embedder& embedder,
                                           const BeamConfig& config = {}) {
    if (config.beam_init == 0) throw DomainError("beam_init must be >= 1");
    if (config.max_hops == 0) throw DomainError("max_hops must be >= 1");
    if (!(config.gap_threshold >= 0.0)) throw DomainError("gap_threshold must be >= 0");
    for (auto t : topics) g.check(t);

    RetrievalResult result;
    result.topic_count = topics.size();
    std::map<Hop, EmbeddingVector> label_cache;
    auto relation_embedding = [&](Hop h) -> const EmbeddingVector& {
        auto it = label_cache.find(h);
        if (it == label_cache.end()) it = label_cache.emplace(h, embedder.embed(g.label(h))).first;
        return it->second;
    };
    const auto end_embedding = embedder.embed(kEndRelation);

    std::vector<EntityId> seen_topics;
    for (auto topic : topics) {
        if (std::find(seen_topics.begin(), seen_topics.end(), topic) != seen_topics.end()) continue;
        seen_topics.push_back(topic);

        auto emit = [&](const detail::BeamEntry& entry, double score) {
            for (const auto& nodes : entry.instances)
                result.paths.push_back({detail::to_path(entry.relations, nodes), score});
        };

        std::vector<detail::BeamEntry> frontier{{{}, {{topic}}, 0.0}};
        while (!frontier.empty()) {
            std::vector<detail::BeamEntry> next;
            for (const auto& entry : frontier) {
                ++result.expanded_states;
                auto state = make_query_state(g, question, topic, entry.relations, embedder);

                std::vector<Hop> hops;
                for (const auto& nodes : entry.instances)
                    for (const auto& st : g.steps(nodes.back(), config.allow_inverse))
                        if (std::find(nodes.begin(), nodes.end(), st.target) == nodes.end())
                            hops.push_back(st.hop);
                std::sort(hops.begin(), hops.end());
                hops.erase(std::unique(hops.begin(), hops.end()), hops.end());

                const double s_end = cosine(state.embedding, end_embedding);
                std::vector<detail::Candidate> candidates;
                for (auto h : hops) candidates.push_back({h, cosine(state.embedding, relation_embedding(h))});
                if (!entry.relations.empty()) candidates.push_back({std::nullopt, s_end});
                if (candidates.empty()) continue;

                double best = -std::numeric_limits<double>::infinity();
                for (const auto& c : candidates) best = std::max(best, c.score);
                std::erase_if(candidates,
                              [&](const detail::Candidate& c) { return best - c.score > config.gap_threshold; });
                std::stable_sort(candidates.begin(), candidates.end(),
                                 [](const detail::Candidate& a, const detail::Candidate& b) {
                                     return a.score > b.score;
                                 });
                if (candidates.size() > config.beam_init) candidates.resize(config.beam_init);

                for (const auto& c : candidates) {
                    double logp = entry.score + expansion_log_probability(c.score, s_end);
                    if (!c.hop) {
                        emit(entry, logp);
                        continue;
                    }
                    detail::BeamEntry child;
                    child.relations = entry.relations;
                    child.relations.push_back(*c.hop);
                    child.score = logp;
                    for (const auto& nodes : entry.instances) {
                        for (const auto& st : g.steps(nodes.back(), config.allow_inverse)) {
                            if (st.hop != *c.hop) continue;
                            if (std::find(nodes.begin(), nodes.end(), st.target) != nodes.end()) continue;
                            if (child.instances.size() >= config.max_paths_per_entry) break;
                            auto extended = nodes;
                            extended.push_back(st.target);
                            child.instances.push_back(std::move(extended));
                        }
                    }
                    if (child.relations.size() >= config.max_hops) {
                        // Forced stop still pays for END, keeping scores comparable.
                        emit(child, child.score + expansion_log_probability(s_end, s_end));
                    } else {
                        next.push_back(std::move(child));
                    }
                }
            }
            frontier = std::move(next);
        }
    }
    sort_scored_paths(result.paths);
    return result;
}

// Drops paths whose terminal has schema types none of which were predicted.
// Untyped terminals are kept.
inline RetrievalResult filter_by_types(const RetrievalResult& result, const std::vector<TypeId>& predicted,
                                       const KnowledgeGraph& g) {
    RetrievalResult out;
    out.topic_count = result.topic_count;
    out.expanded_states = result.expanded_states;
    for (const auto& sp : result.paths) {
        const auto& types = g.types_of(sp.path.terminal);
        bool keep = types.empty() || std::any_of(types.begin(), types.end(), [&](TypeId t) {
                        return std::find(predicted.begin(), predicted.end(), t) != predicted.end();
                    });
        if (keep) out.paths.push_back(sp);
    }
    return out;
}

}  // namespace rporag
