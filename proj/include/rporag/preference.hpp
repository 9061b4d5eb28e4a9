#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"
#include "rporag/kg.hpp"
#include "rporag/sampler.hpp"

namespace rporag {

inline constexpr std::string_view kStopResponse = "STOP";

struct PreferenceHyper {
    double alpha = 1.0;  // confidence decay rate
    double beta = 1.0;   // weight scale
    double gamma = 0.3;  // margin
    std::size_t max_negatives = 8;

    void validate() const {
        if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
        if (!(beta > 0.0)) throw DomainError("beta must be > 0");
        if (!(gamma >= 0.0)) throw DomainError("gamma must be >= 0");
    }
};

// s = exp(-alpha u) for preferred responses, 1 - exp(-alpha u) otherwise.
inline double confidence(double u, double alpha, bool preferred) {
    if (!(u >= 0.0)) throw DomainError("centroid distance must be >= 0");
    if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
    double decay = std::exp(-alpha * u);
    return preferred ? decay : -std::expm1(-alpha * u);
}

// w = beta (1 + 0.5 (s - 0.5)), in [0.75 beta, 1.25 beta].
inline double weight(double s, double beta) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("confidence must lie in [0, 1]");
    if (!(beta > 0.0)) throw DomainError("beta must be > 0");
    return beta * (1.0 + 0.5 * (s - 0.5));
}

// Whitespace token count, at least 1.
inline std::size_t relation_length(std::string_view label) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : label) {
        bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return std::max<std::size_t>(n, 1);
}

struct PreferencePair {
    std::string id;
    std::string question;
    std::string current_path;  // "topic → r1 → ... → ri"
    std::string chosen;        // relation label or STOP
    std::string rejected;
    double u_chosen = 0.0;
    double u_rejected = 0.0;
    double s_chosen = 0.0;
    double s_rejected = 0.0;
    double w_chosen = 0.0;
    double w_rejected = 0.0;
    double normalized_w_chosen = 0.0;  // w / |y|
    double normalized_w_rejected = 0.0;
};

// Label-level view of one sampling run.
struct CandidateRelationPath {
    std::vector<std::string> relations;
    std::string text;  // serialized full path
    std::size_t cluster = 0;
};

struct PreferenceSource {
    std::string id;
    std::string question;
    std::string topic;
    std::vector<CandidateRelationPath> candidates;
    std::size_t cluster_count = 0;
    std::size_t representative = 0;
};

inline PreferenceSource preference_source(const KnowledgeGraph& g, const QuerySampling& s, std::string id) {
    PreferenceSource src;
    src.id = std::move(id);
    src.question = s.training.question;
    src.topic = g.label(s.training.topic);
    src.cluster_count = s.clusters.chosen_k;
    src.representative = s.clusters.representative.value_or(0);
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
        CandidateRelationPath c;
        for (auto h : s.candidates[i].relations) c.relations.push_back(g.label(h));
        c.text = s.candidate_texts[i];
        c.cluster = s.clusters.assignments[i];
        src.candidates.push_back(std::move(c));
    }
    return src;
}

inline std::string prefix_text(const std::string& topic, const std::vector<std::string>& relations, std::size_t n) {
    std::string s = topic;
    for (std::size_t i = 0; i < n; ++i) {
        s += kArrow;
        s += relations[i];
    }
    return s;
}

// Normalized mean of the representative cluster's path embeddings.
inline EmbeddingVector representative_centroid(const PreferenceSource& src, const Embedder& embedder) {
    std::vector<std::string> texts;
    for (const auto& c : src.candidates)
        if (c.cluster == src.representative) texts.push_back(c.text);
    if (texts.empty()) throw EmptyInputError("representative cluster has no members");
    auto vectors = embedder.embed_batch(texts);
    std::vector<double> sum(embedder.dimension(), 0.0);
    for (const auto& v : vectors)
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    return EmbeddingVector(std::move(sum)).normalized();
}

// One context per hop position of every representative-cluster path. The
// chosen response is that path's next relation (STOP after the last hop);
// rejected responses are relations at the same position on paths from other
// clusters, excluding relations any representative path uses there. After the
// last hop the single nearest non-representative last-hop relation is rejected
// against STOP. Negatives are ranked by similarity to the context, capped at
// `max_negatives`. u = 1 - cos(relation-in-context, representative centroid).
inline std::vector<PreferencePair> build_preference_pairs(const PreferenceSource& src, const Embedder& embedder,
                                                          const PreferenceHyper& hyper = {}) {
    hyper.validate();
    std::vector<PreferencePair> pairs;
    if (src.cluster_count <= 1) {
        spdlog::debug("{}: single cluster, no preference pairs", src.id);
        return pairs;
    }
    const auto centroid = representative_centroid(src, embedder);
    auto distance = [&](const std::string& text) { return 1.0 - cosine(embedder.embed(text), centroid); };

    std::vector<const CandidateRelationPath*> preferred, others;
    for (const auto& c : src.candidates) (c.cluster == src.representative ? preferred : others).push_back(&c);

    std::set<std::tuple<std::string, std::string, std::string>> seen;
    auto add_pair = [&](const std::string& context, const std::string& chosen, const std::string& chosen_text,
                        const std::string& rejected, const std::string& rejected_text) {
        if (chosen == rejected) return;
        if (!seen.emplace(context, chosen, rejected).second) return;
        PreferencePair p;
        p.id = src.id;
        p.question = src.question;
        p.current_path = context;
        p.chosen = chosen;
        p.rejected = rejected;
        p.u_chosen = distance(chosen_text);
        p.u_rejected = distance(rejected_text);
        p.s_chosen = confidence(p.u_chosen, hyper.alpha, true);
        p.s_rejected = confidence(p.u_rejected, hyper.alpha, false);
        p.w_chosen = weight(p.s_chosen, hyper.beta);
        p.w_rejected = weight(p.s_rejected, hyper.beta);
        p.normalized_w_chosen = p.w_chosen / static_cast<double>(relation_length(chosen));
        p.normalized_w_rejected = p.w_rejected / static_cast<double>(relation_length(rejected));
        pairs.push_back(std::move(p));
    };

    // Rejected candidates ordered by similarity to "question [SEP] context".
    auto rank = [&](const std::string& context, std::set<std::string> pool, std::size_t cap) {
        auto h_ctx = embedder.embed(src.question + " [SEP] " + context);
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& y : pool)
            ranked.emplace_back(cosine(h_ctx, embedder.embed(context + std::string(kArrow) + y)), y);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::string> out;
        for (std::size_t i = 0; i < std::min(cap, ranked.size()); ++i) out.push_back(ranked[i].second);
        return out;
    };

    for (const auto* path : preferred) {
        const auto& rels = path->relations;
        for (std::size_t pos = 0; pos <= rels.size(); ++pos) {
            auto context = prefix_text(src.topic, rels, pos);
            if (pos < rels.size()) {
                std::set<std::string> pool;
                for (const auto* o : others)
                    if (pos < o->relations.size()) pool.insert(o->relations[pos]);
                for (const auto* p : preferred)
                    if (pos < p->relations.size()) pool.erase(p->relations[pos]);
                auto chosen_text = context + std::string(kArrow) + rels[pos];
                for (const auto& y : rank(context, std::move(pool), hyper.max_negatives))
                    add_pair(context, rels[pos], chosen_text, y, context + std::string(kArrow) + y);
            } else {
                std::set<std::string> pool;
                for (const auto* o : others)
                    if (!o->relations.empty()) pool.insert(o->relations.back());
                for (const auto& y : rank(context, std::move(pool), 1))
                    add_pair(context, std::string(kStopResponse), path->text, y, context + std::string(kArrow) + y);
            }
        }
    }
    return pairs;
}

struct PreferenceContext {
    std::string question;
    std::string current_path;
};

// The policy being aligned; log pi(response | context) <= 0.
class PolicyPort {
public:
    virtual ~PolicyPort() = default;
    virtual double logprob(const PreferenceContext& context, std::string_view response) const = 0;
};

// -log sigmoid(x), stable for large |x|.
inline double neg_log_sigmoid(double x) {
    return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double rpo_margin(double w_chosen, double logp_chosen, double w_rejected, double logp_rejected, double gamma) {
    return w_chosen * logp_chosen - w_rejected * logp_rejected - gamma;
}

inline double rpo_pair_loss(double w_chosen, double logp_chosen, double w_rejected, double logp_rejected,
                            double gamma) {
    return neg_log_sigmoid(rpo_margin(w_chosen, logp_chosen, w_rejected, logp_rejected, gamma));
}

struct RpoGradient {
    double d_logp_chosen = 0.0;
    double d_logp_rejected = 0.0;
};

// d/dx (-log sigmoid(x)) = -sigmoid(-x), chained through the margin.
inline RpoGradient rpo_pair_gradient(double w_chosen, double logp_chosen, double w_rejected, double logp_rejected,
                                     double gamma) {
    double x = rpo_margin(w_chosen, logp_chosen, w_rejected, logp_rejected, gamma);
    double g = -1.0 / (1.0 + std::exp(x));
    return {g * w_chosen, -g * w_rejected};
}

// Mean over pairs of -log sigmoid(W+ log pi(y+|x) - W- log pi(y-|x) - gamma).
inline double rpo_loss(const std::vector<PreferencePair>& pairs, const PolicyPort& policy, double gamma) {
    if (pairs.empty()) throw DomainError("rpo_loss: empty pair list");
    double total = 0.0;
    for (const auto& p : pairs) {
        PreferenceContext ctx{p.question, p.current_path};
        total += rpo_pair_loss(p.normalized_w_chosen, policy.logprob(ctx, p.chosen), p.normalized_w_rejected,
                               policy.logprob(ctx, p.rejected), gamma);
    }
    return total / static_cast<double>(pairs.size());
}

// One line-delimited record per pair.
inline nlohmann::ordered_json preference_record(const PreferencePair& p) {
    return {{"id", p.id},
            {"question", p.question},
            {"current_path", p.current_path},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"s_chosen", p.s_chosen},
            {"s_rejected", p.s_rejected},
            {"w_chosen", p.w_chosen},
            {"w_rejected", p.w_rejected}};
}

inline std::size_t export_preference_records(const std::vector<PreferencePair>& pairs, std::ostream& sink) {
    for (const auto& p : pairs) sink << preference_record(p).dump() << '\n';
    sink.flush();
    if (!sink) throw WriteError("failed to write preference records");
    return pairs.size();
}

// Reads back the exported fields; u and normalized weights are not stored.
inline std::vector<PreferencePair> read_preference_records(std::istream& in) {
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            PreferencePair p;
            p.id = j.at("id").get<std::string>();
            p.question = j.at("question").get<std::string>();
            p.current_path = j.at("current_path").get<std::string>();
            p.chosen = j.at("chosen").get<std::string>();
            p.rejected = j.at("rejected").get<std::string>();
            p.s_chosen = j.at("s_chosen").get<double>();
            p.s_rejected = j.at("s_rejected").get<double>();
            p.w_chosen = j.at("w_chosen").get<double>();
            p.w_rejected = j.at("w_rejected").get<double>();
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("<preferences>", number, e.what());
        }
    }
    return out;
}

// Downstream LoRA trainer settings for both stages, plus the hyperparameters
// the preference records were built with.
inline nlohmann::ordered_json trainer_config(const PreferenceHyper& hyper) {
    using nlohmann::ordered_json;
    return ordered_json{
        {"relation_preference",
         ordered_json{{"lora_r", 32},
                      {"lora_alpha", 64},
                      {"lora_dropout", 0.05},
                      {"optimizer", "AdamW"},
                      {"warmup_ratio", 0.10},
                      {"learning_rate", ordered_json{{"webqsp", 7.5e-6}, {"cwq", 1.0e-6}}},
                      {"scheduler", "cosine"},
                      {"max_length", 2048},
                      {"epochs", ordered_json{{"webqsp", 3}, {"cwq", 1}}},
                      {"alpha", hyper.alpha},
                      {"beta", hyper.beta},
                      {"gamma", hyper.gamma}}},
        {"answer_centered_prompt",
         ordered_json{{"lora_r", 32},
                      {"lora_alpha", 64},
                      {"lora_dropout", 0.05},
                      {"optimizer", "AdamW"},
                      {"warmup_ratio", 0.03},
                      {"learning_rate", 2.0e-4},
                      {"scheduler", "cosine"},
                      {"max_length", 4096},
                      {"epochs", 3}}}};
}

}  // namespace rporag
