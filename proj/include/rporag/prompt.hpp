#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rporag/error.hpp"
#include "rporag/kg.hpp"
#include "rporag/retriever.hpp"

namespace rporag {

struct CandidateGroup {
    EntityId candidate;
    std::vector<ScoredPath> paths;  // score descending
    std::size_t index = 0;
};

// One group per distinct terminal, ordered by best member score, ties by entity id.
inline std::vector<CandidateGroup> group_paths_by_answer(const RetrievalResult& result) {
    std::map<EntityId, std::vector<ScoredPath>> buckets;
    for (const auto& sp : result.paths) buckets[sp.path.terminal].push_back(sp);
    std::vector<CandidateGroup> groups;
    for (auto& [entity, paths] : buckets) {
        sort_scored_paths(paths);
        groups.push_back({entity, std::move(paths), 0});
    }
    std::stable_sort(groups.begin(), groups.end(), [](const CandidateGroup& a, const CandidateGroup& b) {
        return a.paths.front().score > b.paths.front().score;
    });
    for (std::size_t i = 0; i < groups.size(); ++i) groups[i].index = i;
    return groups;
}

inline constexpr std::string_view kDefaultPromptTemplate =
    "Based on the reasoning paths, please answer the given question. The paths are grouped by\n"
    "candidate answer: each candidate is written in angle brackets and followed by the reasoning\n"
    "paths that lead to it. Please keep the answer as simple as possible and return all the\n"
    "possible answers as a list.\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Candidate answers and reasoning paths:\n"
    "{groups}\n";

class PromptTemplate {
public:
    explicit PromptTemplate(std::string text = std::string(kDefaultPromptTemplate)) : text_(std::move(text)) {
        for (auto placeholder : {"{question}", "{groups}"})
            if (text_.find(placeholder) == std::string::npos)
                throw TemplateError(std::string("prompt template is missing placeholder ") + placeholder);
    }

    static PromptTemplate load(std::istream& in) {
        return PromptTemplate(std::string(std::istreambuf_iterator<char>(in), {}));
    }

    const std::string& text() const noexcept { return text_; }

    // Single pass, so placeholder-like text inside values is left alone.
    std::string fill(const std::map<std::string, std::string>& values) const {
        std::string out;
        std::size_t i = 0;
        while (i < text_.size()) {
            bool replaced = false;
            if (text_[i] == '{') {
                for (const auto& [key, value] : values) {
                    std::string token = "{" + key + "}";
                    if (text_.compare(i, token.size(), token) == 0) {
                        out += value;
                        i += token.size();
                        replaced = true;
                        break;
                    }
                }
            }
            if (!replaced) out += text_[i++];
        }
        return out;
    }

private:
    std::string text_;
};

struct RenderConfig {
    std::size_t max_groups = 20;
    std::size_t max_paths_per_group = 10;
};

inline std::string render_groups(const std::vector<CandidateGroup>& groups, const KnowledgeGraph& g,
                                 const RenderConfig& config = {}) {
    std::string block;
    std::size_t dropped_paths = 0;
    std::size_t dropped_groups = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& group = groups[gi];
        if (gi >= config.max_groups) {
            ++dropped_groups;
            dropped_paths += group.paths.size();
            continue;
        }
        block += "<" + g.label(group.candidate) + ">\n";
        for (std::size_t pi = 0; pi < group.paths.size(); ++pi) {
            if (pi >= config.max_paths_per_group) {
                dropped_paths += group.paths.size() - pi;
                break;
            }
            block += "  " + serialize_path(g, group.paths[pi].path) + "\n";
        }
    }
    if (dropped_groups > 0 || dropped_paths > 0) {
        block += "(omitted " + std::to_string(dropped_groups) + " lower-scoring candidates and " +
                 std::to_string(dropped_paths) + " lower-scoring paths)\n";
    }
    if (!block.empty() && block.back() == '\n') block.pop_back();
    return block;
}

inline std::string render_prompt(const std::string& question, const std::vector<CandidateGroup>& groups,
                                 const KnowledgeGraph& g, const PromptTemplate& tmpl = PromptTemplate(),
                                 const RenderConfig& config = {}) {
    return tmpl.fill({{"question", question}, {"groups", render_groups(groups, g, config)}});
}

struct AnswerCenteredPrompt {
    std::string id;
    std::string question;
    std::vector<CandidateGroup> groups;
    std::string text;
};

inline AnswerCenteredPrompt build_prompt(std::string id, std::string question, const RetrievalResult& result,
                                         const KnowledgeGraph& g, const PromptTemplate& tmpl = PromptTemplate(),
                                         const RenderConfig& config = {}) {
    AnswerCenteredPrompt p;
    p.id = std::move(id);
    p.question = std::move(question);
    p.groups = group_paths_by_answer(result);
    p.text = render_prompt(p.question, p.groups, g, tmpl, config);
    return p;
}

inline constexpr std::string_view kTargetSeparator = "; ";

inline std::string join_answers(const std::vector<std::string>& answers) {
    std::string out;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (i) out += kTargetSeparator;
        out += answers[i];
    }
    return out;
}

// {id, prompt, target} per prompt; every prompt id needs a gold answer set.
inline std::size_t export_sft_records(const std::vector<AnswerCenteredPrompt>& prompts,
                                      const std::map<std::string, std::vector<std::string>>& gold,
                                      std::ostream& sink) {
    for (const auto& p : prompts) {
        auto it = gold.find(p.id);
        if (it == gold.end() || it->second.empty())
            throw ConsistencyError("no gold answers for prompt id " + p.id);
    }
    for (const auto& p : prompts) {
        nlohmann::ordered_json rec{{"id", p.id}, {"prompt", p.text}, {"target", join_answers(gold.at(p.id))}};
        sink << rec.dump() << '\n';
    }
    sink.flush();
    if (!sink) throw WriteError("failed to write SFT records");
    return prompts.size();
}

}  // namespace rporag
