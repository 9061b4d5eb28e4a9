#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <nlohmann/json.hpp>

#include "rporag/embedding.hpp"
#include "rporag/error.hpp"
#include "rporag/retriever.hpp"

namespace rporag {

// NFKC, lowercase, trim, collapse internal whitespace runs to one space.
inline std::string normalize_answer(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfkc = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status)) throw Error("ICU NFKC normalizer unavailable");
    auto input = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    icu::UnicodeString normalized = nfkc->normalize(input, status);
    if (U_FAILURE(status)) throw Error("ICU normalization failed");
    normalized.toLower(icu::Locale::getRoot());

    icu::UnicodeString collapsed;
    bool pending_space = false;
    for (int32_t i = 0; i < normalized.length(); i = normalized.moveIndex32(i, 1)) {
        UChar32 c = normalized.char32At(i);
        if (u_isUWhiteSpace(c)) {
            pending_space = !collapsed.isEmpty();
            continue;
        }
        if (pending_space) collapsed.append(static_cast<UChar>(' '));
        pending_space = false;
        collapsed.append(c);
    }
    std::string out;
    collapsed.toUTF8String(out);
    return out;
}

inline std::set<std::string> normalized_set(const std::vector<std::string>& items) {
    std::set<std::string> out;
    for (const auto& s : items) {
        auto n = normalize_answer(s);
        if (!n.empty()) out.insert(std::move(n));
    }
    return out;
}

struct PredictionRecord {
    std::string id;
    std::vector<std::string> predicted;
    std::vector<std::string> gold;
};

struct AnswerScore {
    int hit = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double harmonic_f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline Prf set_prf(const std::set<std::string>& predicted, const std::set<std::string>& gold) {
    std::size_t common = 0;
    for (const auto& x : predicted) common += gold.count(x);
    Prf out;
    out.precision = predicted.empty() ? 0.0 : static_cast<double>(common) / static_cast<double>(predicted.size());
    out.recall = gold.empty() ? 0.0 : static_cast<double>(common) / static_cast<double>(gold.size());
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

// Hit/precision/recall/F1 over normalized answer sets.
inline AnswerScore hit_and_f1(const PredictionRecord& record) {
    auto gold = normalized_set(record.gold);
    if (gold.empty()) throw DomainError("prediction record " + record.id + " has no gold answers");
    auto predicted = normalized_set(record.predicted);
    auto prf = set_prf(predicted, gold);
    AnswerScore s;
    s.hit = std::any_of(predicted.begin(), predicted.end(), [&](const auto& x) { return gold.contains(x); }) ? 1 : 0;
    s.precision = prf.precision;
    s.recall = prf.recall;
    s.f1 = prf.f1;
    return s;
}

struct AnswerSummary {
    double hit = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t questions = 0;
};

inline AnswerSummary summarize_answers(const std::vector<PredictionRecord>& records) {
    AnswerSummary out;
    for (const auto& r : records) {
        auto s = hit_and_f1(r);
        out.hit += s.hit;
        out.precision += s.precision;
        out.recall += s.recall;
        out.f1 += s.f1;
    }
    out.questions = records.size();
    if (!records.empty()) {
        double n = static_cast<double>(records.size());
        out.hit /= n;
        out.precision /= n;
        out.recall /= n;
        out.f1 /= n;
    }
    return out;
}

enum class Averaging { kMacro, kMicro };

using RelationSets = std::map<std::string, std::set<std::string>>;

// Dataset relations against gold relations, per question id. Macro averages
// per-question P/R/F1; micro pools the overlap counts first.
inline Prf relation_coverage(const RelationSets& dataset, const RelationSets& gold,
                             Averaging averaging = Averaging::kMacro) {
    if (dataset.size() != gold.size() ||
        !std::equal(dataset.begin(), dataset.end(), gold.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; }))
        throw ConsistencyError("relation_coverage: question ids are not aligned");
    if (dataset.empty()) throw DomainError("relation_coverage: no questions");

    Prf out;
    if (averaging == Averaging::kMacro) {
        for (const auto& [id, rels] : dataset) {
            auto prf = set_prf(rels, gold.at(id));
            out.precision += prf.precision;
            out.recall += prf.recall;
            out.f1 += prf.f1;
        }
        double n = static_cast<double>(dataset.size());
        out.precision /= n;
        out.recall /= n;
        out.f1 /= n;
        return out;
    }
    std::size_t common = 0, predicted = 0, wanted = 0;
    for (const auto& [id, rels] : dataset) {
        const auto& g = gold.at(id);
        for (const auto& r : rels) common += g.count(r);
        predicted += rels.size();
        wanted += g.size();
    }
    out.precision = predicted ? static_cast<double>(common) / static_cast<double>(predicted) : 0.0;
    out.recall = wanted ? static_cast<double>(common) / static_cast<double>(wanted) : 0.0;
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

struct AlignmentScore {
    double mean = 0.0;
    std::size_t questions = 0;  // questions with at least n candidates
};

// Macro average over questions of the mean cosine between the question and
// its n most similar candidate paths.
inline AlignmentScore alignment_report(const std::vector<std::string>& questions,
                                       const std::vector<std::vector<std::string>>& candidates,
                                       const Embedder& embedder, std::size_t n) {
    if (questions.size() != candidates.size())
        throw ConsistencyError("alignment_report: questions and candidate lists differ in length");
    if (n == 0) throw DomainError("alignment_report: n must be >= 1");
    AlignmentScore out;
    for (std::size_t q = 0; q < questions.size(); ++q) {
        if (candidates[q].size() < n) continue;
        auto hq = embedder.embed(questions[q]);
        auto vectors = embedder.embed_batch(candidates[q]);
        std::vector<double> sims;
        for (const auto& v : vectors) sims.push_back(cosine(hq, v));
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(n), sims.end(),
                          std::greater<>());
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += sims[i];
        out.mean += mean / static_cast<double>(n);
        ++out.questions;
    }
    if (out.questions) out.mean /= static_cast<double>(out.questions);
    return out;
}

// Average retrieved paths per question.
inline double arp(const std::vector<std::size_t>& path_counts) {
    if (path_counts.empty()) throw DomainError("arp: no questions");
    double total = 0.0;
    for (auto c : path_counts) total += static_cast<double>(c);
    return total / static_cast<double>(path_counts.size());
}

inline double arp(const std::vector<RetrievalResult>& results) {
    std::vector<std::size_t> counts;
    for (const auto& r : results) counts.push_back(r.path_count());
    return arp(counts);
}

struct EvalReport {
    AnswerSummary answers;
    double retrieval_accuracy = 0.0;  // questions whose retrieved terminals contain a gold answer
    double arp = 0.0;
    std::optional<Prf> coverage;
    AlignmentScore alignment_top1;
    AlignmentScore alignment_top3;
    std::string prediction_source;
    std::string averaging;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    using nlohmann::ordered_json;
    ordered_json j{{"questions", r.answers.questions},
                   {"prediction_source", r.prediction_source},
                   {"hit", r.answers.hit},
                   {"precision", r.answers.precision},
                   {"recall", r.answers.recall},
                   {"f1", r.answers.f1},
                   {"retrieval_accuracy", r.retrieval_accuracy},
                   {"arp", r.arp}};
    if (r.coverage)
        j["coverage"] = ordered_json{{"averaging", r.averaging},
                                     {"precision", r.coverage->precision},
                                     {"recall", r.coverage->recall},
                                     {"f1", r.coverage->f1}};
    else
        j["coverage"] = nullptr;
    j["alignment"] = ordered_json{{"top1", r.alignment_top1.mean},
                                  {"top1_questions", r.alignment_top1.questions},
                                  {"top3", r.alignment_top3.mean},
                                  {"top3_questions", r.alignment_top3.questions}};
    return j;
}

}  // namespace rporag
