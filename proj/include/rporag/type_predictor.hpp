#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"
#include "rporag/kg.hpp"
#include "rporag/rng.hpp"

namespace rporag {

struct TypeLabel {
    TypeId id;
    std::string label;

    bool operator==(const TypeLabel&) const = default;
};

// Text fed to the embedder for a type: "film.character" -> "film character".
inline std::string type_text(std::string_view label) {
    std::string s(label);
    std::replace(s.begin(), s.end(), '.', ' ');
    return s;
}

// m = clamp(ReLU(<Wq hq, Wt ht>), eps, 1 - eps). Wq and Wt are hidden x dim, row-major.
struct TypePredictorModel {
    std::size_t dim = 0;
    std::size_t hidden = 0;
    double epsilon = 1e-6;
    std::vector<double> wq;
    std::vector<double> wt;
    double final_loss = std::numeric_limits<double>::quiet_NaN();

    TypePredictorModel() = default;
    TypePredictorModel(std::size_t d, std::size_t h, double eps = 1e-6)
        : dim(d), hidden(h), epsilon(eps), wq(d * h, 0.0), wt(d * h, 0.0) {
        if (h == 0) throw DomainError("type predictor hidden size must be >= 1");
    }

    std::vector<double> project(const std::vector<double>& w, const EmbeddingVector& x) const {
        if (x.size() != dim)
            throw ShapeError("type predictor expects dimension " + std::to_string(dim) + ", got " +
                             std::to_string(x.size()));
        std::vector<double> out(hidden, 0.0);
        for (std::size_t i = 0; i < hidden; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < dim; ++j) s += w[i * dim + j] * x[j];
            out[i] = s;
        }
        return out;
    }

    bool operator==(const TypePredictorModel& o) const {
        return dim == o.dim && hidden == o.hidden && epsilon == o.epsilon && wq == o.wq && wt == o.wt;
    }
};

// <Wq hq, Wt ht> before ReLU and clamping.
inline double raw_type_score(const TypePredictorModel& m, const EmbeddingVector& hq, const EmbeddingVector& ht) {
    auto a = m.project(m.wq, hq);
    auto b = m.project(m.wt, ht);
    double z = 0.0;
    for (std::size_t i = 0; i < m.hidden; ++i) z += a[i] * b[i];
    return z;
}

inline double score_type(const TypePredictorModel& m, const EmbeddingVector& hq, const EmbeddingVector& ht) {
    double z = std::max(0.0, raw_type_score(m, hq, ht));
    return std::clamp(z, m.epsilon, 1.0 - m.epsilon);
}

struct TypeTrainingExample {
    std::string question;
    TypeLabel type;
    int label = 0;  // 1 if the type belongs to an answer entity
};

struct EmbeddedTypeExample {
    EmbeddingVector question;
    EmbeddingVector type;
    int label = 0;
};

struct TypeLossGradient {
    double loss = 0.0;
    std::vector<double> grad_wq;
    std::vector<double> grad_wt;
    std::size_t active = 0;  // examples whose score lies strictly inside (eps, 1 - eps)
};

// Summed binary cross-entropy and its gradient. The clamp and ReLU pass zero
// gradient outside (eps, 1 - eps).
inline TypeLossGradient type_loss_and_gradient(const TypePredictorModel& m,
                                               std::span<const EmbeddedTypeExample> batch) {
    TypeLossGradient out;
    out.grad_wq.assign(m.wq.size(), 0.0);
    out.grad_wt.assign(m.wt.size(), 0.0);
    for (const auto& ex : batch) {
        if (ex.label != 0 && ex.label != 1) throw DomainError("type label must be 0 or 1");
        auto a = m.project(m.wq, ex.question);
        auto b = m.project(m.wt, ex.type);
        double z = 0.0;
        for (std::size_t i = 0; i < m.hidden; ++i) z += a[i] * b[i];
        double p = std::clamp(std::max(0.0, z), m.epsilon, 1.0 - m.epsilon);
        out.loss -= ex.label == 1 ? std::log(p) : std::log(1.0 - p);
        if (!(z > m.epsilon && z < 1.0 - m.epsilon)) continue;
        ++out.active;
        double dz = ex.label == 1 ? -1.0 / p : 1.0 / (1.0 - p);
        for (std::size_t i = 0; i < m.hidden; ++i) {
            double gq = dz * b[i];
            double gt = dz * a[i];
            for (std::size_t j = 0; j < m.dim; ++j) {
                out.grad_wq[i * m.dim + j] += gq * ex.question[j];
                out.grad_wt[i * m.dim + j] += gt * ex.type[j];
            }
        }
    }
    return out;
}

inline std::vector<EmbeddedTypeExample> embed_type_examples(std::span<const TypeTrainingExample> batch,
                                                            const Embedder& embedder) {
    std::vector<std::string> texts;
    for (const auto& ex : batch) {
        texts.push_back(ex.question);
        texts.push_back(type_text(ex.type.label));
    }
    auto vectors = embedder.embed_batch(texts);
    std::vector<EmbeddedTypeExample> out;
    for (std::size_t i = 0; i < batch.size(); ++i)
        out.push_back({std::move(vectors[2 * i]), std::move(vectors[2 * i + 1]), batch[i].label});
    return out;
}

inline TypeLossGradient type_loss_and_gradient(const TypePredictorModel& m,
                                               std::span<const TypeTrainingExample> batch,
                                               const Embedder& embedder) {
    if (batch.empty()) throw EmptyInputError("type_loss_and_gradient: empty batch");
    auto embedded = embed_type_examples(batch, embedder);
    return type_loss_and_gradient(m, embedded);
}

struct TypeTrainConfig {
    std::size_t hidden = 64;
    double epsilon = 1e-6;
    double learning_rate = 0.05;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::size_t negatives_per_positive = 4;
    std::uint64_t seed = 42;
};

// Wq = Wt = W with W ~ N(0, 1/hidden), so initially <Wq hq, Wt ht> ~ cos(hq, ht)
// and question/type pairs sharing tokens start inside the active region.
inline TypePredictorModel init_type_predictor(std::size_t dim, const TypeTrainConfig& config) {
    TypePredictorModel m(dim, config.hidden, config.epsilon);
    Rng rng(config.seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden));
    for (auto& w : m.wq) w = scale * rng.normal();
    m.wt = m.wq;
    return m;
}

inline TypePredictorModel train_type_predictor(std::span<const TypeTrainingExample> dataset,
                                               const Embedder& embedder, const TypeTrainConfig& config = {}) {
    if (!std::any_of(dataset.begin(), dataset.end(), [](const auto& ex) { return ex.label == 1; }))
        throw TrainingError("type predictor training set has no positive examples");
    if (config.batch_size == 0) throw DomainError("batch size must be >= 1");

    auto embedded = embed_type_examples(dataset, embedder);
    auto model = init_type_predictor(embedder.dimension(), config);

    // Per-question positive/negative index lists, questions in first-seen order.
    std::vector<std::string> questions;
    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto [it, fresh] = groups.try_emplace(dataset[i].question);
        if (fresh) questions.push_back(dataset[i].question);
        (dataset[i].label == 1 ? it->second.first : it->second.second).push_back(i);
    }

    Rng rng(splitmix64(config.seed));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order;
        for (const auto& q : questions) {
            auto& [pos, neg] = groups.at(q);
            order.insert(order.end(), pos.begin(), pos.end());
            auto shuffled = neg;
            rng.shuffle(shuffled);
            auto keep = std::min(shuffled.size(), config.negatives_per_positive * std::max<std::size_t>(pos.size(), 1));
            order.insert(order.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(keep));
        }
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<EmbeddedTypeExample> batch;
            for (std::size_t b = start; b < std::min(order.size(), start + config.batch_size); ++b)
                batch.push_back(embedded[order[b]]);
            auto g = type_loss_and_gradient(model, batch);
            double step = config.learning_rate / static_cast<double>(batch.size());
            for (std::size_t i = 0; i < model.wq.size(); ++i) {
                model.wq[i] -= step * g.grad_wq[i];
                model.wt[i] -= step * g.grad_wt[i];
            }
        }
    }
    model.final_loss = type_loss_and_gradient(model, embedded).loss / static_cast<double>(embedded.size());
    return model;
}

// Top-k candidates by score, ties by type id.
inline std::vector<TypeLabel> predict_topk_types(const TypePredictorModel& m, const std::string& question,
                                                 const std::vector<TypeLabel>& candidates, std::size_t k,
                                                 const Embedder& embedder) {
    if (k == 0) throw DomainError("k must be >= 1");
    if (candidates.empty()) return {};
    std::vector<std::string> texts{question};
    for (const auto& c : candidates) texts.push_back(type_text(c.label));
    auto vectors = embedder.embed_batch(texts);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        scored.emplace_back(score_type(m, vectors[0], vectors[i + 1]), i);
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return candidates[a.second].id < candidates[b.second].id;
    });
    std::vector<TypeLabel> out;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(candidates[scored[i].second]);
    return out;
}

// "D H epsilon" header, then Wq and Wt row-major, one row per line.
inline void save_type_model(const TypePredictorModel& m, std::ostream& out) {
    out << std::setprecision(17) << m.dim << ' ' << m.hidden << ' ' << m.epsilon << '\n';
    for (const auto* w : {&m.wq, &m.wt}) {
        for (std::size_t i = 0; i < m.hidden; ++i) {
            for (std::size_t j = 0; j < m.dim; ++j) {
                if (j) out << ' ';
                out << (*w)[i * m.dim + j];
            }
            out << '\n';
        }
    }
    if (!out) throw WriteError("failed to write type model");
}

inline TypePredictorModel load_type_model(std::istream& in) {
    std::size_t d = 0, h = 0;
    double eps = 0.0;
    if (!(in >> d >> h >> eps) || d == 0 || h == 0) throw ParseError("<type-model>", 1, "bad header");
    TypePredictorModel m(d, h, eps);
    for (auto* w : {&m.wq, &m.wt})
        for (auto& x : *w)
            if (!(in >> x) || !std::isfinite(x)) throw ParseError("<type-model>", 0, "truncated or non-finite matrix");
    return m;
}

}  // namespace rporag
