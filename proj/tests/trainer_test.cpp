#include <gtest/gtest.h>

#include <filesystem>

#include "cotext/trainer.hpp"
#include "support/synthetic.hpp"

using namespace cotext;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("cotext_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<SeqPair> copy_pairs(std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<SeqPair> out;
    for (int i = 0; i < n; ++i) out.push_back(prefixed(kCopyPrefix, random_content(rng, 2, 5), false));
    return out;
}

bool same_params(const Parameters& a, const Parameters& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].data != b[i].data) return false;
    }
    return true;
}

} // namespace

TEST(Trainer, ConfigValidation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.check());
    c.batch_size = 0;
    EXPECT_THROW(c.check(), Error);
    c = {};
    c.learning_rate = -1;
    EXPECT_THROW(c.check(), Error);
}

TEST(Trainer, Schedule) {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.warmup_steps = 10;
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 5), 5e-4);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 10), 1e-3);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 40), 5e-4);
    c.warmup_steps = 0;
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 1), 1e-3);
}

TEST(Trainer, ClipGlobalNorm) {
    std::vector<Matrix> g = {Matrix(1, 2), Matrix(1, 1)};
    g[0].data = {3.0, 0.0};
    g[1].data = {4.0};
    EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
    EXPECT_NEAR(g[0].data[0], 0.6, 1e-15);
    EXPECT_NEAR(g[1].data[0], 0.8, 1e-15);
    EXPECT_DOUBLE_EQ(clip_gradients(g, 0.0), 1.0);
}

TEST(Trainer, AdamFirstStepMovesByLearningRate) {
    ModelConfig cfg = toy_config();
    auto ck = init_checkpoint(cfg, 1, 0);
    const auto before = ck.params;
    std::vector<Matrix> grads;
    for (const auto& a : ck.params.arrays) {
        Matrix g(a.value.rows, a.value.cols);
        for (double& x : g.data) x = 0.5;
        grads.push_back(g);
    }
    adam_step(ck, grads, 1e-2);
    EXPECT_EQ(ck.step, 1);
    EXPECT_NEAR(before[0].data[0] - ck.params[0].data[0], 1e-2, 1e-8);
}

TEST(Trainer, ZeroStepsKeepsInitialization) {
    const auto cfg = toy_config();
    MixtureSpec mix{{{"copy", copy_pairs(1, 8)}}};
    TrainConfig tc;
    tc.total_steps = 0;
    tc.seed = 4;
    auto ck = init_checkpoint(cfg, tc.seed, 0);
    finetune(ck, mix, tc);
    EXPECT_TRUE(same_params(ck.params, init_parameters(cfg, tc.seed)));
    EXPECT_EQ(ck.step, 0);
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
    const auto cfg = toy_config();
    MixtureSpec mix{{{"copy", copy_pairs(2, 8)}}};
    TrainConfig tc;
    tc.total_steps = 5;
    tc.learning_rate = 0.0;
    auto ck = init_checkpoint(cfg, 3, 0);
    finetune(ck, mix, tc);
    EXPECT_TRUE(same_params(ck.params, init_parameters(cfg, 3)));
    EXPECT_EQ(ck.step, 5);
}

TEST(Trainer, EmptyMixture) {
    TrainConfig tc;
    auto ck = init_checkpoint(toy_config(), 1, 0);
    MixtureSpec none;
    MixtureSpec zero{{{"copy", copy_pairs(1, 4)}, {"reverse", {}}}};
    for (const auto* m : {&none, &zero}) {
        try {
            finetune(ck, *m, tc);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::empty_mixture);
        }
    }
}

TEST(Trainer, DivergenceDetected) {
    const auto cfg = toy_config();
    TrainConfig tc;
    tc.total_steps = 3;
    auto ck = init_checkpoint(cfg, 1, 0);
    ck.params[ck.params.lm_head].data[0] = std::numeric_limits<double>::infinity();
    MixtureSpec mix{{{"copy", copy_pairs(5, 4)}}};
    try {
        finetune(ck, mix, tc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::diverged);
    }
}

TEST(Trainer, MixtureIsExamplesProportional) {
    MixtureSpec mix{{{"a", copy_pairs(1, 30)}, {"b", copy_pairs(2, 60)}, {"c", copy_pairs(3, 10)}}};
    MixtureSampler s(mix, 77);
    const int draws = 20000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < draws; ++i) ++counts[s.next().first];
    const double p[] = {0.3, 0.6, 0.1};
    for (int t = 0; t < 3; ++t) {
        const double mean = draws * p[t];
        const double sigma = std::sqrt(draws * p[t] * (1 - p[t]));
        EXPECT_LT(std::abs(counts[t] - mean), 3 * sigma) << t;
    }
}

TEST(Trainer, SingleTaskMixtureIsPlainOrder) {
    MixtureSpec mix{{{"a", copy_pairs(1, 7)}}};
    MixtureSampler s(mix, 5);
    EpochOrder plain(7, 5 + 0x9E37ULL);
    for (int i = 0; i < 50; ++i) {
        const auto [t, idx] = s.next();
        EXPECT_EQ(t, 0u);
        EXPECT_EQ(idx, plain.next());
    }
}

TEST(Trainer, DeterministicFinetune) {
    const auto cfg = toy_config();
    MixtureSpec mix{{{"copy", copy_pairs(9, 16)}}};
    TrainConfig tc;
    tc.total_steps = 10;
    tc.seed = 12;
    auto a = init_checkpoint(cfg, 12, 0);
    auto b = init_checkpoint(cfg, 12, 0);
    auto ca = cfg;
    ca.dropout = 0.1;
    a.config = ca;
    b.config = ca;
    const auto la = finetune(a, mix, tc);
    const auto lb = finetune(b, mix, tc);
    EXPECT_EQ(la, lb);
    EXPECT_TRUE(same_params(a.params, b.params));
}

TEST(Trainer, TinyCopyTaskLossDrops) {
    const auto cfg = toy_config();
    MixtureSpec mix{{{"copy", copy_pairs(10, 64)}}};
    TrainConfig tc;
    tc.total_steps = 150;
    tc.batch_size = 8;
    tc.warmup_steps = 10;
    tc.learning_rate = 3e-3;
    auto ck = init_checkpoint(cfg, 1, 0);
    const auto losses = finetune(ck, mix, tc);
    const auto w = window_means(losses, 50);
    EXPECT_TRUE(strictly_decreasing(w));
}

TEST(Trainer, PretrainLowersSmoothedLoss) {
    std::vector<std::string> texts;
    for (int i = 0; i < 40; ++i) texts.push_back("int f" + std::to_string(i % 7) + " ( int x ) { return x + " +
                                                 std::to_string(i % 5) + " ; }");
    const auto vocab = train_vocab(texts, 300);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_input_len = 32;
    mc.max_target_len = 16;
    TrainConfig tc;
    tc.total_steps = 120;
    tc.batch_size = 4;
    tc.seed = 3;
    const auto data = tokenize_corpus(texts, vocab, mc);
    const auto r = pretrain(data, vocab, {}, mc, tc);
    EXPECT_EQ(r.losses.size(), 120u);
    EXPECT_TRUE(strictly_decreasing(window_means(r.losses, 40)));
    EXPECT_EQ(r.checkpoint.vocab_fingerprint, vocab.fingerprint());
}

TEST(Trainer, DenoisingPairFitsDecoder) {
    ModelConfig mc = toy_config(500);
    mc.max_target_len = 6;
    std::vector<int> ids(16);
    std::iota(ids.begin(), ids.end(), 10);
    const SentinelIds s{400, 100, kEosId};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = make_denoising_pair(ids, {0.5, 3, 0}, s, mc, seed);
        EXPECT_LE(p.target.size(), 6u);
        EXPECT_EQ(p.target.back(), kEosId);
    }
}

TEST(Checkpoint, RoundTripBitIdentical) {
    const auto dir = temp_dir("ckpt");
    auto ck = init_checkpoint(toy_config(), 7, 0xABCDEF0123456789ULL);
    MixtureSpec mix{{{"copy", copy_pairs(3, 8)}}};
    TrainConfig tc;
    tc.total_steps = 3;
    finetune(ck, mix, tc);
    save_checkpoint(ck, dir.string());
    const auto back = load_checkpoint(dir.string(), ck.vocab_fingerprint);
    EXPECT_EQ(back.step, 3);
    EXPECT_EQ(back.config, ck.config);
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        EXPECT_EQ(std::memcmp(back.params[i].data.data(), ck.params[i].data.data(), ck.params[i].size() * 8), 0);
        EXPECT_EQ(back.adam.m[i].data, ck.adam.m[i].data);
        EXPECT_EQ(back.adam.v[i].data, ck.adam.v[i].data);
    }
    const auto dir2 = temp_dir("ckpt2");
    save_checkpoint(back, dir2.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        EXPECT_EQ(read_file(e.path()), read_file(dir2 / e.path().filename())) << e.path();
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST(Checkpoint, ArrayFileLayout) {
    const auto dir = temp_dir("layout");
    const auto ck = init_checkpoint(toy_config(), 7, 1);
    save_checkpoint(ck, dir.string());
    const auto bytes = read_file(dir / "param.lm_head.bin");
    ASSERT_EQ(bytes.size(), 8u * (3 + ck.params[ck.params.lm_head].size()));
    EXPECT_EQ(bytes[0], 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 32);
    EXPECT_EQ(static_cast<unsigned char>(bytes[16]), kToyVocab);
    const auto norm = read_file(dir / "param.encoder.final_norm.bin");
    EXPECT_EQ(norm[0], 1);
    EXPECT_EQ(norm.size(), 8u * (2 + 32));
    fs::remove_all(dir);
}

TEST(Checkpoint, VersionAndVocabMismatch) {
    const auto dir = temp_dir("mismatch");
    save_checkpoint(init_checkpoint(toy_config(), 7, 42), dir.string());
    try {
        load_checkpoint(dir.string(), 43);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::vocab_mismatch);
    }
    auto text = read_file(dir / "manifest");
    text.replace(text.find("format_version=1"), 16, "format_version=2");
    std::ofstream(dir / "manifest", std::ios::binary) << text;
    try {
        load_checkpoint(dir.string());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::version_mismatch);
    }
    fs::remove_all(dir);
    try {
        load_checkpoint(dir.string());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::io_failure);
    }
}
