#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rporag/error.hpp"
#include "rporag/rng.hpp"

namespace rporag {

class EmbeddingVector {
public:
    EmbeddingVector() = default;

    explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
        for (double x : values_)
            if (!std::isfinite(x)) throw DomainError("embedding entries must be finite");
    }

    static EmbeddingVector basis(std::size_t dimension, std::size_t axis) {
        std::vector<double> v(dimension, 0.0);
        v.at(axis) = 1.0;
        return EmbeddingVector(std::move(v));
    }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }

    double norm() const {
        double s = 0.0;
        for (double x : values_) s += x * x;
        return std::sqrt(s);
    }

    EmbeddingVector normalized() const {
        double n = norm();
        if (!(n > 0.0)) throw DegenerateVectorError("cannot normalize a zero vector");
        std::vector<double> v(values_);
        for (double& x : v) x /= n;
        return EmbeddingVector(std::move(v));
    }

    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<double> values_;
};

inline double dot(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.size() != v.size())
        throw ShapeError("dimension mismatch: " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

// <u,v> / (|u||v|). Symmetric bit-for-bit: products commute and the
// summation order does not depend on argument order.
inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    double d = dot(u, v);
    double nu = u.norm();
    double nv = v.norm();
    if (!(nu > 0.0) || !(nv > 0.0)) throw DegenerateVectorError("cosine of a zero-norm vector");
    double c = d / (nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

// Text -> unit vector. Implementations must be deterministic per instance and
// safe to call concurrently.
class Embedder {
public:
    virtual ~Embedder() = default;

    virtual std::size_t dimension() const = 0;

    // Order-preserving; every output is unit-norm.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const = 0;

    EmbeddingVector embed(std::string_view text) const {
        std::string owned(text);
        return embed_batch(std::span<const std::string>(&owned, 1)).front();
    }
};

// Lowercased runs of ASCII alphanumerics (bytes >= 0x80 count as word characters).
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// Bag-of-tokens embedder: every token gets a seeded pseudo-random unit
// direction, a text maps to the normalized sum of its token directions.
class DeterministicEmbedder final : public Embedder {
public:
    DeterministicEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
        if (dimension < 8) throw DomainError("deterministic embedder needs dimension >= 8");
    }

    std::size_t dimension() const override { return dimension_; }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_text(t));
        return out;
    }

private:
    EmbeddingVector embed_text(std::string_view text) const {
        auto tokens = tokenize(text);
        if (tokens.empty()) return EmbeddingVector::basis(dimension_, 0);
        std::vector<double> sum(dimension_, 0.0);
        for (const auto& tok : tokens) {
            const auto& dir = direction(tok);
            for (std::size_t i = 0; i < dimension_; ++i) sum[i] += dir[i];
        }
        EmbeddingVector v(std::move(sum));
        if (!(v.norm() > 0.0)) return EmbeddingVector::basis(dimension_, 0);
        return v.normalized();
    }

    const std::vector<double>& direction(const std::string& token) const {
        std::lock_guard lock(mutex_);
        auto it = cache_.find(token);
        if (it != cache_.end()) return it->second;
        Rng rng(splitmix64(fnv1a64(token) ^ splitmix64(seed_)));
        std::vector<double> v(dimension_);
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (double& x : v) {
                x = rng.uniform(-1.0, 1.0);
                n2 += x * x;
            }
        } while (!(n2 > 0.0));
        double n = std::sqrt(n2);
        for (double& x : v) x /= n;
        // unordered_map never invalidates references to elements on insert.
        return cache_.emplace(token, std::move(v)).first->second;
    }

    std::size_t dimension_;
    std::uint64_t seed_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, std::vector<double>> cache_;
};

}  // namespace rporag
