#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures/synthetic.hpp"
#include "oracles/oracles.hpp"
#include "rporag/sampler.hpp"

using namespace rporag;

namespace {

std::string dump(const ClusterResult& r) {
    std::ostringstream out;
    out.precision(17);
    out << r.chosen_k << '|';
    for (double x : r.inertia) out << x << ',';
    for (auto a : r.assignments) out << a << ',';
    for (const auto& c : r.centroids)
        for (double x : c.values()) out << x << ',';
    return out.str();
}

std::vector<oracle::Point> as_points(const std::vector<EmbeddingVector>& vs) {
    std::vector<oracle::Point> out;
    for (const auto& v : vs) out.emplace_back(v.values().begin(), v.values().end());
    return out;
}

KnowledgeGraph toy_graph() {
    std::ifstream in(std::filesystem::path(RPORAG_DATA_DIR) / "toy" / "triples.tsv");
    return load_triples(in);
}

}  // namespace

TEST(ChooseK, LargestDrop) {
    EXPECT_EQ(choose_k({5.0}), 1u);
    EXPECT_EQ(choose_k({10.0, 9.0, 2.0, 1.5}), 3u);
    EXPECT_EQ(choose_k({10.0, 4.0, 3.0, 2.5}), 2u);
    EXPECT_EQ(choose_k({10.0, 6.0, 2.0, 1.0}), 2u);  // ties keep the smaller k
}

TEST(ChooseK, CurvatureVariant) {
    std::vector<double> curve{100.0, 60.0, 20.0, 15.0, 12.0, 10.0};
    EXPECT_EQ(choose_k(curve, ElbowRule::kMaxCurvature), 3u);
}

TEST(Cluster, InertiaNonIncreasingAndChosenKBounded) {
    Rng rng(11);
    for (int i = 0; i < 5; ++i) {
        auto pts = fixtures::clustered_points(rng, 12, 3, 16, 0.2);
        ClusterConfig cfg;
        cfg.k_max = 6;
        auto r = cluster_paths(pts, cfg);
        ASSERT_EQ(r.inertia.size(), 6u);
        for (std::size_t k = 1; k < r.inertia.size(); ++k) EXPECT_LE(r.inertia[k], r.inertia[k - 1] + 1e-12);
        EXPECT_GE(r.chosen_k, 1u);
        EXPECT_LE(r.chosen_k, 6u);
        EXPECT_EQ(r.centroids.size(), r.chosen_k);
        EXPECT_EQ(r.assignments.size(), pts.size());
    }
}

TEST(Cluster, SeededRunsAreIdentical) {
    Rng rng(5);
    auto pts = fixtures::clustered_points(rng, 12, 4, 8, 0.3);
    EXPECT_EQ(dump(cluster_paths(pts)), dump(cluster_paths(pts)));
}

TEST(Cluster, SinglePathAndDuplicates) {
    auto one = cluster_paths({EmbeddingVector({1.0, 0.0})});
    EXPECT_EQ(one.chosen_k, 1u);
    auto dup = cluster_paths({EmbeddingVector({1.0, 0.0}), EmbeddingVector({1.0, 0.0}), EmbeddingVector({0.0, 1.0})});
    EXPECT_EQ(dup.inertia.size(), 2u);  // k limited by distinct points
    EXPECT_EQ(dup.chosen_k, 2u);
    EXPECT_THROW(cluster_paths({}), EmptyInputError);
}

TEST(Cluster, MatchesRestartOracle) {
    Rng rng(2024);
    int agree = 0;
    for (int i = 0; i < 8; ++i) {
        auto pts = fixtures::clustered_points(rng, 4 + rng.index(9), 1 + rng.index(4), 12, 0.15);
        auto r = cluster_paths(pts);
        agree += r.chosen_k == oracle::largest_drop_k(as_points(pts), 10, 100, 17 + i) ? 1 : 0;
    }
    EXPECT_GE(agree, 7);
}

TEST(Cluster, MiniBatchAboveCutoff) {
    Rng rng(3);
    auto pts = fixtures::clustered_points(rng, 40, 2, 8, 0.05);
    ClusterConfig cfg;
    cfg.minibatch_cutoff = 10;
    cfg.minibatch_size = 8;
    cfg.k_max = 4;
    auto a = cluster_paths(pts, cfg);
    EXPECT_TRUE(a.minibatch);
    EXPECT_EQ(dump(a), dump(cluster_paths(pts, cfg)));
    EXPECT_EQ(a.chosen_k, 2u);
    for (std::size_t i = 2; i < pts.size(); ++i) EXPECT_EQ(a.assignments[i], a.assignments[i % 2]);
}

TEST(Representative, ArgmaxCosineLowestIndexOnTie) {
    ClusterResult r;
    r.centroids = {EmbeddingVector({0.0, 1.0}), EmbeddingVector({1.0, 0.0}), EmbeddingVector({1.0, 0.0})};
    EXPECT_EQ(select_representative_cluster(EmbeddingVector({1.0, 0.1}), r), 1u);
}

TEST(Sampling, ShutterKeepsRelevantAndDropsFightSong) {
    auto g = toy_graph();
    DeterministicEmbedder e(256, 42);
    auto s = sample_query(g, "Which languages are spoken at the location where the film Shutter occurs?",
                          g.entity("Shutter"), g.entity("Thai language"), e);
    ASSERT_FALSE(s.training.unreachable);
    std::set<std::string> kept;
    for (const auto& p : s.training.paths) kept.insert(serialize_path(g, p));
    EXPECT_TRUE(kept.contains(
        "Shutter → film.film.featured_film_locations → location.country.languages_spoken → Thai language"));
    EXPECT_FALSE(kept.contains("Shutter → film.film.subjects → sports.fight_song.sports_team → Thai language"));
    EXPECT_LT(s.training.paths.size(), s.candidates.size());
    EXPECT_EQ(s.training.paths.size(), s.training.similarities.size());
}

TEST(Sampling, SubsetOfShortestPaths) {
    auto g = toy_graph();
    DeterministicEmbedder e(256, 42);
    auto s = sample_query(g, "Who is the spouse of the director of Titanic?", g.entity("Titanic"),
                          g.entity("Suzy Amis"), e);
    auto all = enumerate_shortest_paths(g, g.entity("Titanic"), g.entity("Suzy Amis"));
    ASSERT_FALSE(s.training.paths.empty());
    for (const auto& p : s.training.paths) EXPECT_NE(std::find(all.begin(), all.end(), p), all.end());
}

TEST(Sampling, UnreachablePairIsFlagged) {
    auto g = toy_graph();
    DeterministicEmbedder e(64, 1);
    auto s = sample_query(g, "q", g.entity("Thai language"), g.entity("Shutter"), e);
    EXPECT_TRUE(s.training.unreachable);
    EXPECT_TRUE(s.training.paths.empty());
}

TEST(Sampling, UnionOverPairsDeduplicates) {
    auto g = toy_graph();
    DeterministicEmbedder e(64, 1);
    auto a = sample_training_paths(g, "q", g.entity("Inception"), g.entity("Christopher Nolan"), e);
    auto b = sample_training_paths(g, "q", g.entity("Titanic"), g.entity("Suzy Amis"), e);
    auto u = union_training_paths({a, a, b});
    EXPECT_EQ(u.size(), a.paths.size() + b.paths.size());
}
