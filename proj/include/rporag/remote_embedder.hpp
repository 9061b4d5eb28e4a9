#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"

namespace rporag {

struct EmbedServiceHealth {
    std::string status;
    std::string model;
    std::size_t dimension = 0;
};

// Client for the embedding sidecar:
//   POST {base}/embed   {"texts": [...]} -> {"vectors": [[...]], "model": str, "dimension": D}
//   GET  {base}/health  -> {"status": str, "model": str, "dimension": D}
// Requests are serialized through one connection; vectors are re-normalized.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(const std::string& endpoint, std::size_t dimension,
                   std::chrono::milliseconds timeout = std::chrono::seconds(30), std::size_t batch_size = 64)
        : dimension_(dimension), batch_size_(batch_size) {
        if (dimension == 0) throw DomainError("remote embedder dimension must be positive");
        if (batch_size == 0) throw DomainError("remote embedder batch size must be positive");
        auto scheme = endpoint.find("://");
        auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
        auto slash = endpoint.find('/', host_start);
        std::string base = endpoint.substr(0, slash);
        if (slash != std::string::npos) prefix_ = endpoint.substr(slash);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
        client_ = std::make_unique<httplib::Client>(base);
        if (!client_->is_valid()) throw EmbeddingServiceError("invalid embedding endpoint: " + endpoint);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client_->set_connection_timeout(secs.count(), usecs.count());
        client_->set_read_timeout(secs.count(), usecs.count());
        client_->set_write_timeout(secs.count(), usecs.count());
    }

    std::size_t dimension() const override { return dimension_; }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (std::size_t start = 0; start < texts.size(); start += batch_size_) {
            auto chunk = texts.subspan(start, std::min(batch_size_, texts.size() - start));
            auto vectors = request(chunk);
            for (auto& v : vectors) out.push_back(std::move(v));
        }
        return out;
    }

    EmbedServiceHealth health() const {
        std::lock_guard lock(mutex_);
        auto res = client_->Get(prefix_ + "/health");
        if (!res) throw EmbeddingServiceError("health request failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw EmbeddingServiceError("health returned HTTP " + std::to_string(res->status));
        try {
            auto body = nlohmann::json::parse(res->body);
            return {body.at("status").get<std::string>(), body.at("model").get<std::string>(),
                    body.at("dimension").get<std::size_t>()};
        } catch (const nlohmann::json::exception& e) {
            throw EmbeddingServiceError(std::string("malformed health response: ") + e.what());
        }
    }

private:
    std::vector<EmbeddingVector> request(std::span<const std::string> texts) const {
        nlohmann::json payload = {{"texts", nlohmann::json::array()}};
        for (const auto& t : texts) payload["texts"].push_back(t);

        httplib::Result res;
        {
            std::lock_guard lock(mutex_);
            res = client_->Post(prefix_ + "/embed", payload.dump(), "application/json");
        }
        if (!res) throw EmbeddingServiceError("embed request failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw EmbeddingServiceError("embed returned HTTP " + std::to_string(res->status));

        std::vector<EmbeddingVector> vectors;
        try {
            auto body = nlohmann::json::parse(res->body);
            const auto& rows = body.at("vectors");
            if (rows.size() != texts.size())
                throw EmbeddingServiceError("embed returned " + std::to_string(rows.size()) + " vectors for " +
                                            std::to_string(texts.size()) + " texts");
            for (const auto& row : rows) {
                auto values = row.get<std::vector<double>>();
                if (values.size() != dimension_)
                    throw EmbeddingServiceError("dimension mismatch: expected " + std::to_string(dimension_) +
                                                ", got " + std::to_string(values.size()));
                vectors.push_back(EmbeddingVector(std::move(values)).normalized());
            }
        } catch (const nlohmann::json::exception& e) {
            throw EmbeddingServiceError(std::string("malformed embed response: ") + e.what());
        } catch (const DegenerateVectorError& e) {
            throw EmbeddingServiceError(std::string("embed returned a zero vector: ") + e.what());
        } catch (const DomainError& e) {
            throw EmbeddingServiceError(std::string("embed returned non-finite values: ") + e.what());
        }
        return vectors;
    }

    std::size_t dimension_;
    std::size_t batch_size_;
    std::string prefix_;
    mutable std::mutex mutex_;
    std::unique_ptr<httplib::Client> client_;
};

}  // namespace rporag
