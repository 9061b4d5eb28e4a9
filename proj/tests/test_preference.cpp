#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "rporag/preference.hpp"
#include "rporag/rng.hpp"

using namespace rporag;

namespace {

// Children / produced-films example: the representative cluster follows
// children -> producer.films, another cluster follows children -> costume designer.
PreferenceSource children_source() {
    PreferenceSource src;
    src.id = "children";
    src.question = "What films did the children of Francis Ford Coppola produce?";
    src.topic = "Francis Ford Coppola";
    src.cluster_count = 2;
    src.representative = 0;
    src.candidates = {
        {{"people.person.children", "film.producer.films"},
         "Francis Ford Coppola → people.person.children → film.producer.films → Lost in Translation", 0},
        {{"people.person.children", "film.film.costume_designed_by"},
         "Francis Ford Coppola → people.person.children → film.film.costume_designed_by → Lost in Translation", 1},
    };
    return src;
}

class TablePolicy final : public PolicyPort {
public:
    std::map<std::string, double> table;
    double logprob(const PreferenceContext&, std::string_view response) const override {
        return table.at(std::string(response));
    }
};

}  // namespace

TEST(Confidence, Values) {
    EXPECT_EQ(confidence(0.0, 1.0, true), 1.0);
    EXPECT_EQ(confidence(0.0, 1.0, false), 0.0);
    EXPECT_NEAR(confidence(0.6931, 1.0, true), 0.5, 1e-4);
    EXPECT_NEAR(confidence(0.6931, 1.0, false), 0.5, 1e-4);
    EXPECT_THROW(confidence(-0.1, 1.0, true), DomainError);
    EXPECT_THROW(confidence(0.1, 0.0, true), DomainError);
}

TEST(Weight, RangeAndEndpoints) {
    EXPECT_EQ(weight(0.0, 1.0), 0.75);
    EXPECT_EQ(weight(1.0, 1.0), 1.25);
    EXPECT_EQ(weight(0.5, 2.0), 2.0);
    EXPECT_THROW(weight(1.5, 1.0), DomainError);
    EXPECT_THROW(weight(0.5, 0.0), DomainError);
}

TEST(RpoLoss, KnownValues) {
    EXPECT_NEAR(neg_log_sigmoid(0.9), 0.3411538747320878, 1e-5);
    EXPECT_NEAR(rpo_pair_loss(1.0, -0.5, 1.0, -0.5, 0.0), std::log(2.0), 1e-12);
    EXPECT_NEAR(neg_log_sigmoid(-800.0), 800.0, 1e-9);
    EXPECT_NEAR(neg_log_sigmoid(800.0), 0.0, 1e-300);
}

TEST(RpoLoss, GradientMatchesCentralDifferences) {
    Rng rng(21);
    for (int i = 0; i < 50; ++i) {
        double wc = rng.uniform(0.3, 1.3), wr = rng.uniform(0.3, 1.3), gamma = rng.uniform(0.0, 1.0);
        double lc = -rng.uniform(0.0, 5.0), lr = -rng.uniform(0.0, 5.0);
        auto g = rpo_pair_gradient(wc, lc, wr, lr, gamma);
        double fc = oracle::central_difference([&](double x) { return rpo_pair_loss(wc, x, wr, lr, gamma); }, lc, 1e-5);
        double fr = oracle::central_difference([&](double x) { return rpo_pair_loss(wc, lc, wr, x, gamma); }, lr, 1e-5);
        EXPECT_LT(oracle::relative_error(g.d_logp_chosen, fc), 1e-5);
        EXPECT_LT(oracle::relative_error(g.d_logp_rejected, fr), 1e-5);
    }
}

TEST(RpoLoss, MeanOverPairsUsesLengthNormalizedWeights) {
    PreferencePair p;
    p.chosen = "a b";
    p.rejected = "c";
    p.normalized_w_chosen = 0.5;
    p.normalized_w_rejected = 1.0;
    TablePolicy policy;
    policy.table = {{"a b", -1.0}, {"c", -2.0}};
    double expected = neg_log_sigmoid(0.5 * -1.0 - 1.0 * -2.0 - 0.3);
    EXPECT_NEAR(rpo_loss({p, p}, policy, 0.3), expected, 1e-12);
    EXPECT_THROW(rpo_loss({}, policy, 0.3), DomainError);
}

TEST(RelationLength, CountsWhitespaceTokens) {
    EXPECT_EQ(relation_length("film.producer.films"), 1u);
    EXPECT_EQ(relation_length("STOP"), 1u);
    EXPECT_EQ(relation_length("two words"), 2u);
    EXPECT_EQ(relation_length(""), 1u);
}

TEST(Pairs, ProducerChosenOverCostumeDesigner) {
    DeterministicEmbedder e(256, 42);
    auto pairs = build_preference_pairs(children_source(), e);
    bool found = false;
    for (const auto& p : pairs) {
        if (p.current_path == "Francis Ford Coppola → people.person.children") {
            EXPECT_EQ(p.chosen, "film.producer.films");
            EXPECT_EQ(p.rejected, "film.film.costume_designed_by");
            EXPECT_GT(p.w_chosen, p.w_rejected);
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(Pairs, StopPairAfterLastHopAndBoundsHold) {
    DeterministicEmbedder e(256, 42);
    auto pairs = build_preference_pairs(children_source(), e);
    bool stop = false;
    for (const auto& p : pairs) {
        EXPECT_NE(p.chosen, p.rejected);
        for (double s : {p.s_chosen, p.s_rejected}) {
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, 1.0);
        }
        for (double w : {p.w_chosen, p.w_rejected}) {
            EXPECT_GE(w, 0.75);
            EXPECT_LE(w, 1.25);
        }
        if (p.chosen == "STOP") {
            stop = true;
            EXPECT_EQ(p.current_path, "Francis Ford Coppola → people.person.children → film.producer.films");
            EXPECT_EQ(p.rejected, "film.film.costume_designed_by");
        }
    }
    EXPECT_TRUE(stop);
}

TEST(Pairs, SingleClusterYieldsNone) {
    auto src = children_source();
    src.cluster_count = 1;
    for (auto& c : src.candidates) c.cluster = 0;
    DeterministicEmbedder e(64, 1);
    EXPECT_TRUE(build_preference_pairs(src, e).empty());
}

TEST(Pairs, SharedRelationIsNeverRejected) {
    DeterministicEmbedder e(256, 42);
    for (const auto& p : build_preference_pairs(children_source(), e))
        EXPECT_NE(p.rejected, "people.person.children");
}

TEST(Records, ExportAndReadBack) {
    DeterministicEmbedder e(256, 42);
    auto pairs = build_preference_pairs(children_source(), e);
    std::stringstream buf;
    EXPECT_EQ(export_preference_records(pairs, buf), pairs.size());
    auto back = read_preference_records(buf);
    ASSERT_EQ(back.size(), pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(back[i].chosen, pairs[i].chosen);
        EXPECT_EQ(back[i].w_rejected, pairs[i].w_rejected);
    }
}

TEST(TrainerConfig, CarriesHyperparameters) {
    PreferenceHyper h;
    h.gamma = 0.7;
    auto j = trainer_config(h);
    EXPECT_EQ(j["relation_preference"]["lora_r"], 32);
    EXPECT_EQ(j["relation_preference"]["lora_alpha"], 64);
    EXPECT_EQ(j["relation_preference"]["gamma"], 0.7);
    EXPECT_EQ(j["answer_centered_prompt"]["max_length"], 4096);
}
