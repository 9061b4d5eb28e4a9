#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"
#include "rporag/kg.hpp"
#include "rporag/rng.hpp"

namespace rporag {

// How the cluster count is read off the inertia curve.
enum class ElbowRule {
    kLargestDrop,   // argmax_k inertia[k-1] - inertia[k]
    kMaxCurvature,  // kneedle-style: farthest point below the chord of the normalized curve
};

struct ClusterConfig {
    std::size_t k_max = 10;
    std::uint64_t seed = 42;
    ElbowRule elbow = ElbowRule::kLargestDrop;
    std::size_t max_iterations = 100;
    double tolerance = 1e-6;
    std::size_t restarts = 10;
    std::size_t minibatch_cutoff = 1500;  // mini-batch mode when n > cutoff
    std::size_t minibatch_size = 256;
    std::size_t minibatch_epochs = 50;
};

struct ClusterResult {
    std::vector<std::size_t> k_evaluated;   // 1..K
    std::vector<double> inertia;            // inertia[i] for k = k_evaluated[i]
    std::size_t chosen_k = 0;
    std::vector<std::size_t> assignments;   // point -> cluster
    std::vector<EmbeddingVector> centroids; // chosen_k, unit length (zero if degenerate)
    std::optional<std::size_t> representative;
    bool minibatch = false;

    std::vector<std::size_t> members(std::size_t cluster) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i)
            if (assignments[i] == cluster) out.push_back(i);
        return out;
    }
};

namespace kmeans {

using Point = std::vector<double>;

struct Run {
    std::vector<Point> centers;
    std::vector<std::size_t> assignments;
    double inertia = std::numeric_limits<double>::infinity();
};

inline double squared_distance(const Point& a, const Point& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Nearest center (lowest index on ties) for every point; returns the inertia.
inline double assign(const std::vector<Point>& points, const std::vector<Point>& centers,
                     std::vector<std::size_t>& assignments, std::vector<double>* distances = nullptr) {
    assignments.assign(points.size(), 0);
    if (distances) distances->assign(points.size(), 0.0);
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            double d = squared_distance(points[i], centers[c]);
            if (d < best) {
                best = d;
                assignments[i] = c;
            }
        }
        inertia += best;
        if (distances) (*distances)[i] = best;
    }
    return inertia;
}

inline std::size_t farthest_point(const std::vector<double>& distances) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < distances.size(); ++i)
        if (distances[i] > distances[arg]) arg = i;
    return arg;
}

inline std::vector<Point> plus_plus_init(const std::vector<Point>& points, std::size_t k, Rng& rng) {
    std::vector<Point> centers{points[rng.index(points.size())]};
    std::vector<double> d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centers[0]);
    while (centers.size() < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            pick = points.size() - 1;
            for (std::size_t i = 0; i < points.size(); ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (d2[pick] == 0.0) pick = farthest_point(d2);
        } else {
            pick = rng.index(points.size());
        }
        centers.push_back(points[pick]);
        for (std::size_t i = 0; i < points.size(); ++i)
            d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
    }
    return centers;
}

// Lloyd iterations from the given centers. Empty clusters are re-seeded at
// the point farthest from its center, so inertia never increases.
inline Run lloyd(const std::vector<Point>& points, std::vector<Point> centers, std::size_t max_iterations,
                 double tolerance) {
    const std::size_t dim = points.front().size();
    const std::size_t k = centers.size();
    Run run;
    std::vector<double> distances;
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        assign(points, centers, run.assignments, &distances);
        std::vector<Point> sums(k, Point(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            auto c = run.assignments[i];
            ++counts[c];
            for (std::size_t j = 0; j < dim; ++j) sums[c][j] += points[i][j];
        }
        double movement = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            Point next;
            if (counts[c] == 0) {
                auto far = farthest_point(distances);
                next = points[far];
                distances[far] = 0.0;
            } else {
                next = sums[c];
                for (double& x : next) x /= static_cast<double>(counts[c]);
            }
            movement = std::max(movement, std::sqrt(squared_distance(next, centers[c])));
            centers[c] = std::move(next);
        }
        if (movement <= tolerance) break;
    }
    run.inertia = assign(points, centers, run.assignments);
    run.centers = std::move(centers);
    return run;
}

// Mini-batch k-means with per-center learning rates 1/count.
inline Run minibatch(const std::vector<Point>& points, std::vector<Point> centers, std::size_t batch_size,
                     std::size_t epochs, Rng& rng) {
    const std::size_t dim = points.front().size();
    std::vector<double> counts(centers.size(), 0.0);
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            auto stop = std::min(order.size(), start + batch_size);
            std::vector<std::size_t> nearest(stop - start);
            for (std::size_t b = start; b < stop; ++b) {
                const auto& p = points[order[b]];
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < centers.size(); ++c) {
                    double d = squared_distance(p, centers[c]);
                    if (d < best) {
                        best = d;
                        nearest[b - start] = c;
                    }
                }
            }
            for (std::size_t b = start; b < stop; ++b) {
                auto c = nearest[b - start];
                counts[c] += 1.0;
                double eta = 1.0 / counts[c];
                const auto& p = points[order[b]];
                for (std::size_t j = 0; j < dim; ++j) centers[c][j] += eta * (p[j] - centers[c][j]);
            }
        }
    }
    Run run;
    run.inertia = assign(points, centers, run.assignments);
    run.centers = std::move(centers);
    return run;
}

inline std::size_t count_distinct(const std::vector<Point>& points) {
    std::set<Point> distinct(points.begin(), points.end());
    return distinct.size();
}

}  // namespace kmeans

// Cluster count from an inertia curve over k = 1..K (inertia[k-1]).
inline std::size_t choose_k(const std::vector<double>& inertia, ElbowRule rule = ElbowRule::kLargestDrop) {
    const std::size_t K = inertia.size();
    if (K <= 1) return 1;
    std::size_t best_k = 2;
    double best_drop = inertia[0] - inertia[1];
    for (std::size_t k = 3; k <= K; ++k) {
        double drop = inertia[k - 2] - inertia[k - 1];
        if (drop > best_drop) {
            best_drop = drop;
            best_k = k;
        }
    }
    if (rule == ElbowRule::kLargestDrop || K < 3) return best_k;

    double hi = *std::max_element(inertia.begin(), inertia.end());
    double lo = *std::min_element(inertia.begin(), inertia.end());
    if (!(hi > lo)) return best_k;
    std::size_t knee = 0;
    double knee_gap = 0.0;
    for (std::size_t k = 1; k <= K; ++k) {
        double x = static_cast<double>(k - 1) / static_cast<double>(K - 1);
        double y = (inertia[k - 1] - lo) / (hi - lo);
        double gap = (1.0 - x) - y;
        if (gap > knee_gap) {
            knee_gap = gap;
            knee = k;
        }
    }
    return knee == 0 ? best_k : knee;
}

// k-means for k = 1..min(k_max, #distinct points), best of `restarts`
// seeded k-means++ runs plus a warm start from the (k-1) solution, which
// keeps the inertia curve non-increasing.
inline ClusterResult cluster_paths(const std::vector<EmbeddingVector>& embeddings, const ClusterConfig& config = {}) {
    if (embeddings.empty()) throw EmptyInputError("cluster_paths: no embeddings");
    if (config.k_max == 0) throw DomainError("cluster_paths: k_max must be >= 1");
    const std::size_t dim = embeddings.front().size();
    std::vector<kmeans::Point> points;
    points.reserve(embeddings.size());
    for (const auto& e : embeddings) {
        if (e.size() != dim) throw ShapeError("cluster_paths: mixed embedding dimensions");
        points.emplace_back(e.values().begin(), e.values().end());
    }

    ClusterResult result;
    result.minibatch = points.size() > config.minibatch_cutoff;
    const std::size_t k_top = std::min(config.k_max, kmeans::count_distinct(points));
    Rng rng(config.seed);
    std::vector<kmeans::Run> runs;
    for (std::size_t k = 1; k <= k_top; ++k) {
        kmeans::Run best;
        const std::size_t tries = result.minibatch ? 1 : std::max<std::size_t>(1, config.restarts);
        for (std::size_t attempt = 0; attempt < tries; ++attempt) {
            auto init = kmeans::plus_plus_init(points, k, rng);
            auto run = result.minibatch
                           ? kmeans::minibatch(points, std::move(init), config.minibatch_size,
                                               config.minibatch_epochs, rng)
                           : kmeans::lloyd(points, std::move(init), config.max_iterations, config.tolerance);
            if (run.inertia < best.inertia) best = std::move(run);
        }
        if (!runs.empty()) {
            const auto& prev = runs.back();
            if (best.inertia > prev.inertia) {
                std::vector<double> distances;
                std::vector<std::size_t> unused;
                kmeans::assign(points, prev.centers, unused, &distances);
                auto warm = prev.centers;
                warm.push_back(points[kmeans::farthest_point(distances)]);
                auto run = kmeans::lloyd(points, std::move(warm), config.max_iterations, config.tolerance);
                if (run.inertia < best.inertia) best = std::move(run);
            }
        }
        result.k_evaluated.push_back(k);
        result.inertia.push_back(best.inertia);
        runs.push_back(std::move(best));
    }

    result.chosen_k = choose_k(result.inertia, config.elbow);
    auto& chosen = runs[result.chosen_k - 1];
    result.assignments = chosen.assignments;
    for (auto& c : chosen.centers) {
        EmbeddingVector v(c);
        result.centroids.push_back(v.norm() > 0.0 ? v.normalized() : v);
    }
    return result;
}

// argmax_k cos(query, c_k), lowest index on ties.
inline std::size_t select_representative_cluster(const EmbeddingVector& query, const ClusterResult& result) {
    if (result.centroids.empty()) throw EmptyInputError("select_representative_cluster: no centroids");
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < result.centroids.size(); ++k) {
        const auto& c = result.centroids[k];
        double sim = c.norm() > 0.0 ? cosine(query, c) : -2.0;
        if (sim > best_sim) {
            best_sim = sim;
            best = k;
        }
    }
    return best;
}

struct SamplerConfig {
    ClusterConfig cluster;
    std::size_t path_cap = kDefaultPathCap;
    bool allow_inverse = false;
};

// The high-fidelity path set for one (question, topic, answer) triple.
struct SampledTrainingSet {
    std::string question;
    EntityId topic;
    EntityId answer;
    std::vector<Path> paths;
    std::vector<double> similarities;
    bool unreachable = false;
};

// Everything computed while sampling; preference construction reuses it.
struct QuerySampling {
    SampledTrainingSet training;
    std::vector<Path> candidates;
    std::vector<std::string> candidate_texts;
    std::vector<EmbeddingVector> candidate_embeddings;
    std::vector<double> candidate_similarities;
    EmbeddingVector query_embedding;
    ClusterResult clusters;
};

inline QuerySampling sample_query(const KnowledgeGraph& g, const std::string& question, EntityId topic,
                                  EntityId answer, const Embedder& embedder, const SamplerConfig& config = {}) {
    QuerySampling s;
    s.training.question = question;
    s.training.topic = topic;
    s.training.answer = answer;
    s.candidates = enumerate_shortest_paths(g, topic, answer, config.path_cap, config.allow_inverse);
    if (s.candidates.empty()) {
        s.training.unreachable = true;
        return s;
    }
    for (const auto& p : s.candidates) s.candidate_texts.push_back(serialize_path(g, p));
    s.candidate_embeddings = embedder.embed_batch(s.candidate_texts);
    s.query_embedding = embedder.embed(question);
    for (const auto& e : s.candidate_embeddings) s.candidate_similarities.push_back(cosine(s.query_embedding, e));

    s.clusters = cluster_paths(s.candidate_embeddings, config.cluster);
    auto rep = select_representative_cluster(s.query_embedding, s.clusters);
    s.clusters.representative = rep;
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
        if (s.clusters.assignments[i] != rep) continue;
        s.training.paths.push_back(s.candidates[i]);
        s.training.similarities.push_back(s.candidate_similarities[i]);
    }
    if (s.clusters.minibatch)
        spdlog::debug("mini-batch clustering for {} candidate paths", s.candidates.size());
    return s;
}

inline SampledTrainingSet sample_training_paths(const KnowledgeGraph& g, const std::string& question,
                                                EntityId topic, EntityId answer, const Embedder& embedder,
                                                const SamplerConfig& config = {}) {
    return sample_query(g, question, topic, answer, embedder, config).training;
}

// Union of the sampled paths over every (topic, answer) pair, first occurrence order.
inline std::vector<Path> union_training_paths(const std::vector<SampledTrainingSet>& sets) {
    std::vector<Path> out;
    for (const auto& s : sets)
        for (const auto& p : s.paths)
            if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    return out;
}

}  // namespace rporag
