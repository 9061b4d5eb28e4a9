#pragma once

// Seeded generators and hand-built fixtures shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rporag/embedding.hpp"
#include "rporag/eval.hpp"
#include "rporag/kg.hpp"
#include "rporag/retriever.hpp"
#include "rporag/rng.hpp"

namespace fixtures {

inline std::string node(std::size_t i) { return "n" + std::to_string(i); }

// n nodes, up to m triples over relations "rel.r0" .. "rel.r{relations-1}".
inline rporag::KnowledgeGraph random_graph(rporag::Rng& rng, std::size_t n, std::size_t m, std::size_t relations) {
    rporag::KnowledgeGraph g;
    for (std::size_t i = 0; i < n; ++i) g.add_entity(node(i));
    for (std::size_t i = 0; i < m; ++i)
        g.add_triple(node(rng.index(n)), "rel.r" + std::to_string(rng.index(relations)), node(rng.index(n)));
    return g;
}

// n unit vectors in `dim` dimensions drawn around `groups` random centers.
inline std::vector<rporag::EmbeddingVector> clustered_points(rporag::Rng& rng, std::size_t n, std::size_t groups,
                                                             std::size_t dim, double spread) {
    std::vector<std::vector<double>> centers(groups, std::vector<double>(dim));
    for (auto& c : centers)
        for (auto& x : c) x = rng.normal();
    std::vector<rporag::EmbeddingVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto v = centers[i % groups];
        for (auto& x : v) x += spread * rng.normal();
        out.push_back(rporag::EmbeddingVector(v).normalized());
    }
    return out;
}

struct PlantedKg {
    rporag::KnowledgeGraph graph;
    std::string question;
    rporag::EntityId topic;
    rporag::Path gold;
    std::size_t relation_vocabulary = 0;
};

// Random graph with a planted topic -> ... -> answer chain of 1..3 hops.
inline PlantedKg planted_kg(rporag::Rng& rng, std::size_t relations = 4) {
    PlantedKg kg;
    kg.relation_vocabulary = relations;
    const std::size_t n = 20 + rng.index(20);
    auto rel = [&](std::size_t r) { return "domain.type.rel_" + std::to_string(r); };
    for (std::size_t i = 0; i < n; ++i) kg.graph.add_entity(node(i));
    for (std::size_t i = 0; i < 2 * n; ++i) kg.graph.add_triple(node(rng.index(n)), rel(rng.index(relations)), node(rng.index(n)));

    const std::size_t hops = 1 + rng.index(3);
    std::vector<std::size_t> chain{rng.index(n)};
    while (chain.size() < hops + 1) {
        auto next = rng.index(n);
        if (std::find(chain.begin(), chain.end(), next) == chain.end()) chain.push_back(next);
    }
    std::vector<std::string> labels;
    for (std::size_t h = 0; h < hops; ++h) {
        labels.push_back(rel(rng.index(relations)));
        kg.graph.add_triple(node(chain[h]), labels.back(), node(chain[h + 1]));
    }
    kg.topic = kg.graph.entity(node(chain.front()));
    kg.gold.topic = kg.topic;
    for (const auto& l : labels) kg.gold.relations.push_back(kg.graph.hop(l));
    for (std::size_t h = 1; h < hops; ++h) kg.gold.intermediates.push_back(kg.graph.entity(node(chain[h])));
    kg.gold.terminal = kg.graph.entity(node(chain.back()));
    kg.question = "which node follows " + labels.front() + " from " + node(chain.front());
    return kg;
}

// Random scored paths over a small graph's entities; paths need not be valid.
inline rporag::RetrievalResult random_retrieval(rporag::Rng& rng, const rporag::KnowledgeGraph& g,
                                                std::size_t max_paths) {
    rporag::RetrievalResult r;
    r.topic_count = 1;
    const std::size_t count = rng.index(max_paths + 1);
    for (std::size_t i = 0; i < count; ++i) {
        rporag::ScoredPath sp;
        sp.path.topic = rporag::EntityId{static_cast<std::uint32_t>(rng.index(g.entity_count()))};
        const std::size_t hops = 1 + rng.index(3);
        for (std::size_t h = 0; h < hops; ++h)
            sp.path.relations.push_back(rporag::Hop{rporag::RelationId{static_cast<std::uint32_t>(rng.index(g.relation_count()))}, false});
        for (std::size_t h = 1; h < hops; ++h)
            sp.path.intermediates.push_back(rporag::EntityId{static_cast<std::uint32_t>(rng.index(g.entity_count()))});
        sp.path.terminal = rporag::EntityId{static_cast<std::uint32_t>(rng.index(g.entity_count()))};
        sp.score = -std::floor(rng.uniform() * 8.0) / 4.0;  // coarse, so ties occur
        r.paths.push_back(sp);
    }
    rporag::sort_scored_paths(r.paths);
    return r;
}

// The Juice / Don Killuminati example: two paths end at Bishop, one at Q.
struct BishopFixture {
    rporag::KnowledgeGraph graph;
    rporag::RetrievalResult result;
    std::string question = "What character in Juice is also the music producer of The Don Killuminati: The 7 Day Theory?";
};

inline BishopFixture bishop_fixture() {
    BishopFixture f;
    auto& g = f.graph;
    g.add_triple("Juice", "film.film.starring", "Juice cast 1");
    g.add_triple("Juice cast 1", "film.performance.character", "Bishop");
    g.add_triple("Juice", "film.film.starring", "Juice cast 2");
    g.add_triple("Juice cast 2", "film.performance.character", "Q");
    g.add_triple("The Don Killuminati", "music.album.producer", "Tupac Shakur");
    g.add_triple("Tupac Shakur", "film.actor.character", "Bishop");
    auto path = [&](std::string topic, std::vector<std::string> rels, std::vector<std::string> mids,
                    std::string terminal, double score) {
        rporag::ScoredPath sp;
        sp.path.topic = g.entity(topic);
        for (const auto& r : rels) sp.path.relations.push_back(g.hop(r));
        for (const auto& m : mids) sp.path.intermediates.push_back(g.entity(m));
        sp.path.terminal = g.entity(terminal);
        sp.score = score;
        return sp;
    };
    f.result.topic_count = 2;
    f.result.paths = {
        path("The Don Killuminati", {"music.album.producer", "film.actor.character"}, {"Tupac Shakur"}, "Bishop", -0.4),
        path("Juice", {"film.film.starring", "film.performance.character"}, {"Juice cast 2"}, "Q", -0.6),
        path("Juice", {"film.film.starring", "film.performance.character"}, {"Juice cast 1"}, "Bishop", -0.7),
    };
    rporag::sort_scored_paths(f.result.paths);
    return f;
}

struct MetricFixture {
    std::vector<std::string> predicted;
    std::vector<std::string> gold;
    int hit;
    double precision;
    double recall;
    double f1;
};

// Values worked by hand: P = |pred ∩ gold| / |pred|, R = |pred ∩ gold| / |gold|,
// F1 = 2PR / (P + R), all over normalized, deduplicated strings.
inline std::vector<MetricFixture> metric_fixtures() {
    return {
        {{"Bishop"}, {"Bishop"}, 1, 1.0, 1.0, 1.0},
        {{"Q"}, {"Bishop"}, 0, 0.0, 0.0, 0.0},
        {{}, {"Bishop"}, 0, 0.0, 0.0, 0.0},
        {{"Bishop", "Q"}, {"Bishop"}, 1, 0.5, 1.0, 2.0 / 3.0},
        {{"Bishop"}, {"Bishop", "Q"}, 1, 1.0, 0.5, 2.0 / 3.0},
        {{"a", "b", "c"}, {"b", "c", "d", "e"}, 1, 2.0 / 3.0, 0.5, 4.0 / 7.0},
        {{"  Thai   Language "}, {"thai language"}, 1, 1.0, 1.0, 1.0},
        {{"ＢＩＳＨＯＰ"}, {"bishop"}, 1, 1.0, 1.0, 1.0},
        {{"x", "x", "y"}, {"x"}, 1, 0.5, 1.0, 2.0 / 3.0},
        {{"a", "b", "c", "d"}, {"d"}, 1, 0.25, 1.0, 0.4},
        {{"Paris", "France", "Euro"}, {"Euro", "Paris", "France"}, 1, 1.0, 1.0, 1.0},
        {{"Ｑ", "z"}, {"q", "y", "w"}, 1, 0.5, 1.0 / 3.0, 0.4},
    };
}

}  // namespace fixtures
