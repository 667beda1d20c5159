#include <gtest/gtest.h>

#include <sstream>

#include "cotext/infer.hpp"
#include "support/synthetic.hpp"

using namespace cotext;
using namespace testing_support;

namespace {

struct Fixture {
    ModelConfig cfg = toy_config();
    Parameters params = init_parameters(cfg, 31);
};

// Re-scores an output by summing per-position log-softmax of a full forward pass.
double rescore(const Parameters& p, const ModelConfig& cfg, const std::vector<int>& input, const Hypothesis& h) {
    const std::vector<SeqPair> pairs = {{input, h.tokens}};
    const auto batch = Batch::from_pairs(pairs);
    const auto logits = forward(p, cfg, batch);
    double s = 0.0;
    for (std::size_t t = 0; t < h.tokens.size(); ++t) {
        const double* row = logits.at(0, t);
        double z = 0.0;
        for (std::size_t j = 0; j < logits.vocab; ++j) z += std::exp(row[j]);
        s += row[h.tokens[t]] - std::log(z);
    }
    return s;
}

std::vector<std::vector<int>> random_inputs(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < n; ++i) out.push_back(random_content(rng, 1, 8));
    return out;
}

} // namespace

TEST(Infer, DecodeConfigValidation) {
    DecodeConfig d;
    EXPECT_NO_THROW(d.check());
    d.beam_size = 0;
    EXPECT_THROW(d.check(), Error);
    d = {};
    d.max_length = 0;
    EXPECT_THROW(d.check(), Error);
}

TEST(Infer, GreedyEqualsBeamOfOne) {
    Fixture f;
    DecodeConfig g;
    g.max_length = 10;
    DecodeConfig b = g;
    b.strategy = DecodeStrategy::beam;
    b.beam_size = 1;
    for (const auto& in : random_inputs(20, 1)) {
        const auto hg = greedy_search(f.params, f.cfg, in, g);
        const auto hb = beam_search(f.params, f.cfg, in, b);
        EXPECT_EQ(hg.tokens, hb.tokens);
        EXPECT_EQ(hg.logprob, hb.logprob);
    }
}

TEST(Infer, MaxLengthOne) {
    Fixture f;
    DecodeConfig d;
    d.max_length = 1;
    EXPECT_EQ(greedy_search(f.params, f.cfg, std::vector<int>{4, 5}, d).tokens.size(), 1u);
    d.strategy = DecodeStrategy::beam;
    EXPECT_EQ(beam_search(f.params, f.cfg, std::vector<int>{4, 5}, d).tokens.size(), 1u);
}

TEST(Infer, InputTooLong) {
    Fixture f;
    const std::vector<int> in(17, 4);
    try {
        greedy_search(f.params, f.cfg, in, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::input_too_long);
    }
    DecodeConfig b;
    b.strategy = DecodeStrategy::beam;
    EXPECT_THROW(beam_search(f.params, f.cfg, in, b), Error);
}

TEST(Infer, BeamScoresMatchRescoreOracle) {
    Fixture f;
    DecodeConfig b;
    b.strategy = DecodeStrategy::beam;
    b.max_length = 8;
    for (const auto& in : random_inputs(10, 2)) {
        const auto h = beam_search(f.params, f.cfg, in, b);
        EXPECT_NEAR(h.logprob, rescore(f.params, f.cfg, in, h), 1e-9);
        EXPECT_NEAR(h.score, h.logprob / std::pow((5.0 + h.tokens.size()) / 6.0, 0.6), 1e-12);
    }
}

TEST(Infer, ZeroAlphaIsPureLogProb) {
    EXPECT_EQ(length_normalized(-3.5, 7, 0.0), -3.5);
    EXPECT_NEAR(length_normalized(-3.0, 7, 1.0), -1.5, 1e-15);
}

TEST(Infer, BeamNotWorseThanGreedyAtZeroAlpha) {
    Fixture f;
    DecodeConfig g;
    g.max_length = 8;
    DecodeConfig b = g;
    b.strategy = DecodeStrategy::beam;
    b.length_penalty = 0.0;
    for (const auto& in : random_inputs(20, 3)) {
        const auto hg = greedy_search(f.params, f.cfg, in, g);
        const auto hb = beam_search(f.params, f.cfg, in, b);
        if (hg.finished) {
            EXPECT_GE(hb.logprob, hg.logprob - 1e-12);
        }
    }
}

TEST(Infer, ClassifyTieAndRescore) {
    Fixture f;
    const std::vector<int> in = {4, 5, 6};
    const std::vector<std::vector<int>> same = {{7, 8}, {7, 8}};
    EXPECT_EQ(classify(f.params, f.cfg, in, same).index, 0u);
    const std::vector<std::vector<int>> labels = {{7, 8}, {9}, {5, 5, 5}};
    const auto r = classify(f.params, f.cfg, in, labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Hypothesis h;
        h.tokens = labels[i];
        h.tokens.push_back(kEosId);
        EXPECT_NEAR(r.scores[i], rescore(f.params, f.cfg, in, h), 1e-9);
    }
    std::vector<double> shifted = r.scores;
    for (double& s : shifted) s += 123.0;
    EXPECT_EQ(std::max_element(shifted.begin(), shifted.end()) - shifted.begin(),
              static_cast<std::ptrdiff_t>(r.index));
}

TEST(Infer, Deterministic) {
    Fixture f;
    DecodeConfig b;
    b.strategy = DecodeStrategy::beam;
    b.max_length = 6;
    const std::vector<int> in = {3, 4, 5};
    EXPECT_EQ(beam_search(f.params, f.cfg, in, b).tokens, beam_search(f.params, f.cfg, in, b).tokens);
}

TEST(Infer, OverfitMappingAndClassifier) {
    const auto cfg = toy_config();
    Rng rng(5);
    std::vector<SeqPair> pairs;
    for (int i = 0; i < 8; ++i) {
        SeqPair p;
        p.input = random_content(rng, 3, 5);
        p.target = without_eos(random_content(rng, 2, 4));
        p.target.push_back(kEosId);
        pairs.push_back(p);
    }
    auto ck = init_checkpoint(cfg, 2, 0);
    TrainConfig tc;
    tc.total_steps = 400;
    tc.batch_size = 8;
    tc.learning_rate = 3e-3;
    tc.warmup_steps = 20;
    finetune(ck, MixtureSpec{{{"map", pairs}}}, tc);
    EXPECT_EQ(greedy_exact_match(ck.params, cfg, pairs), 1.0);
    std::vector<std::vector<int>> labels;
    for (const auto& p : pairs) labels.push_back(without_eos(p.target));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto r = classify(ck.params, cfg, pairs[i].input, labels);
        EXPECT_EQ(labels[r.index], labels[i]);
    }
}

TEST(Infer, PredictionFileRoundTrip) {
    const std::vector<Prediction> preds = {{"a", "x[i] = 1;"}, {"b", "negative"}};
    std::stringstream s;
    write_predictions(s, preds);
    EXPECT_EQ(s.str().substr(0, 36), R"({"id":"a","prediction":"x[i] = 1;"})" "\n");
    EXPECT_EQ(read_predictions(s), preds);
}

TEST(Infer, PredictionWithBrokenUtf8IsStillWritten) {
    std::stringstream ss;
    write_predictions(ss, {{"p0", std::string("ab\xA3") + "c"}});
    const auto back = read_predictions(ss);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].prediction, "ab\xEF\xBF\xBD" "c");
}
