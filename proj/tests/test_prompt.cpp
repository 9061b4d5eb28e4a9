#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures/synthetic.hpp"
#include "rporag/prompt.hpp"

using namespace rporag;

TEST(Grouping, BishopFixture) {
    auto f = fixtures::bishop_fixture();
    auto groups = group_paths_by_answer(f.result);
    ASSERT_EQ(groups.size(), 2u);
    EXPECT_EQ(f.graph.label(groups[0].candidate), "Bishop");
    EXPECT_EQ(groups[0].paths.size(), 2u);
    EXPECT_EQ(f.graph.label(groups[1].candidate), "Q");
    EXPECT_EQ(groups[1].paths.size(), 1u);
}

TEST(Grouping, PartitionOnRandomResults) {
    auto f = fixtures::bishop_fixture();
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        auto r = fixtures::random_retrieval(rng, f.graph, 12);
        auto groups = group_paths_by_answer(r);
        std::size_t total = 0;
        std::set<EntityId> seen;
        for (const auto& g : groups) {
            EXPECT_TRUE(seen.insert(g.candidate).second);
            ASSERT_FALSE(g.paths.empty());
            for (const auto& sp : g.paths) EXPECT_EQ(sp.path.terminal, g.candidate);
            total += g.paths.size();
        }
        EXPECT_EQ(total, r.paths.size());
        for (std::size_t k = 1; k < groups.size(); ++k)
            EXPECT_GE(groups[k - 1].paths.front().score, groups[k].paths.front().score);
    }
}

TEST(Render, BishopHeadersWithContiguousPaths) {
    auto f = fixtures::bishop_fixture();
    auto text = render_prompt(f.question, group_paths_by_answer(f.result), f.graph);
    auto bishop = text.find("<Bishop>\n");
    auto q = text.find("<Q>\n");
    ASSERT_NE(bishop, std::string::npos);
    ASSERT_NE(q, std::string::npos);
    EXPECT_LT(bishop, q);
    std::string block = text.substr(bishop, q - bishop);
    EXPECT_EQ(block,
              "<Bishop>\n"
              "  The Don Killuminati → music.album.producer → film.actor.character → Bishop\n"
              "  Juice → film.film.starring → film.performance.character → Bishop\n");
    EXPECT_NE(text.find(f.question), std::string::npos);
}

TEST(Render, TruncationFooter) {
    auto f = fixtures::bishop_fixture();
    RenderConfig cfg;
    cfg.max_groups = 1;
    cfg.max_paths_per_group = 1;
    auto block = render_groups(group_paths_by_answer(f.result), f.graph, cfg);
    EXPECT_EQ(block,
              "<Bishop>\n"
              "  The Don Killuminati → music.album.producer → film.actor.character → Bishop\n"
              "(omitted 1 lower-scoring candidates and 2 lower-scoring paths)");
}

TEST(Render, EmptyRetrievalLeavesEmptyBlock) {
    auto f = fixtures::bishop_fixture();
    EXPECT_EQ(render_groups({}, f.graph), "");
}

TEST(Template, MissingPlaceholderRejected) {
    EXPECT_THROW(PromptTemplate("no placeholders"), TemplateError);
    EXPECT_THROW(PromptTemplate("{question} only"), TemplateError);
    PromptTemplate t("Q: {question}\n{groups}");
    EXPECT_EQ(t.fill({{"question", "{groups}"}, {"groups", "G"}}), "Q: {groups}\nG");
}

TEST(Sft, TargetsJoinGold) {
    auto f = fixtures::bishop_fixture();
    auto p = build_prompt("q1", f.question, f.result, f.graph);
    std::ostringstream out;
    EXPECT_EQ(export_sft_records({p}, {{"q1", {"Bishop"}}}, out), 1u);
    auto j = nlohmann::json::parse(out.str());
    EXPECT_EQ(j["target"], "Bishop");
    EXPECT_EQ(j["prompt"], p.text);
    EXPECT_EQ(join_answers({"a", "b"}), "a; b");
    std::ostringstream sink;
    EXPECT_THROW(export_sft_records({p}, {}, sink), ConsistencyError);
    EXPECT_TRUE(sink.str().empty());
}
