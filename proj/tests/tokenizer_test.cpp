#include <gtest/gtest.h>

#include <filesystem>

#include "cotext/codec.hpp"
#include "cotext/rng.hpp"
#include "cotext/tokenizer.hpp"
#include "support/data.hpp"
#include "support/oracles.hpp"

using namespace cotext;

namespace {

std::vector<std::string> normalized_sample() {
    std::vector<std::string> out;
    for (const auto& s : testing_support::corpus_code()) out.push_back(normalize(s, CodecTable::default_table()));
    return out;
}

const Vocabulary& sample_vocab() {
    static const Vocabulary v = train_vocab(normalized_sample(), 2000);
    return v;
}


} // namespace

TEST(Tokenizer, ReservedLayout) {
    const Vocabulary v;
    EXPECT_EQ(v.size(), kMinVocabSize);
    EXPECT_EQ(v.piece(kPadId), "<pad>");
    EXPECT_EQ(v.piece(kEosId), "</s>");
    EXPECT_EQ(v.piece(kUnkId), "<unk>");
    EXPECT_EQ(v.sentinel_id(0), v.size() - 100);
    EXPECT_EQ(v.piece(v.size() - 1), "<extra_id_99>");
    for (int b = 0; b < 256; ++b) EXPECT_EQ(v.piece(kByteBase + b), std::string(1, static_cast<char>(b)));
}

TEST(Tokenizer, FirstMergeIsMostFrequentPair) {
    const std::vector<std::string> corpus = {"aaaa aaaa"};
    const auto v = train_vocab(corpus, 300);
    ASSERT_GE(v.num_merges(), 1);
    EXPECT_EQ(v.piece(kFirstMergeId), "aa");
    EXPECT_TRUE(v.find("aa").has_value());
}

TEST(Tokenizer, TrainPreconditions) {
    const std::vector<std::string> corpus = {"abc"};
    try {
        train_vocab(corpus, 258);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::vocab_too_small);
    }
    const std::vector<std::string> empty;
    try {
        train_vocab(empty, 400);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::corpus_empty);
    }
}

TEST(Tokenizer, EncodeBasics) {
    const auto& v = sample_vocab();
    EXPECT_TRUE(v.encode("").empty());
    EXPECT_EQ(v.decode(v.encode("hello world")), "hello world");
    const Vocabulary bytes_only;
    EXPECT_EQ(bytes_only.encode("q~\x01Z").size(), 4u);
}

TEST(Tokenizer, DecodeSentinelsAndRange) {
    const auto& v = sample_vocab();
    const std::vector<int> s0 = {v.sentinel_id(0)};
    EXPECT_EQ(v.decode(s0), "<extra_id_0>");
    const std::vector<int> bad = {v.size()};
    try {
        v.decode(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::id_out_of_range);
    }
    const auto ids = v.encode("x <extra_id_3> y<extra_id_100>");
    EXPECT_EQ(std::count(ids.begin(), ids.end(), v.sentinel_id(3)), 1);
    EXPECT_EQ(v.decode(ids), "x <extra_id_3> y<extra_id_100>");
}

TEST(Tokenizer, RoundTripOnSample) {
    const auto& v = sample_vocab();
    for (const auto& s : normalized_sample()) ASSERT_EQ(v.decode(v.encode(s)), s);
}

TEST(Tokenizer, SentinelHygieneOnRandomStrings) {
    const auto& v = sample_vocab();
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const auto s = testing_support::random_text(rng, 40);
        const auto ids = v.encode(s);
        for (int id : ids) ASSERT_LT(id, v.sentinel_base());
        ASSERT_EQ(v.decode(ids), s);
    }
}

TEST(Tokenizer, MergesShortenEncoding) {
    const auto& v = sample_vocab();
    const Vocabulary bytes_only;
    std::size_t merged = 0, raw = 0;
    for (const auto& s : normalized_sample()) {
        merged += v.encode(s).size();
        raw += bytes_only.encode(s).size();
    }
    EXPECT_LT(merged * 2, raw);
}

TEST(Tokenizer, ReachesTargetSizeOnSample) {
    const auto v = train_vocab(normalized_sample(), 8000);
    EXPECT_EQ(v.base_size(), 8000);
    EXPECT_EQ(v.size(), 8100);
    for (int b = 0; b < 256; ++b) EXPECT_EQ(v.find(std::string(1, static_cast<char>(b))), kByteBase + b);
}

TEST(Tokenizer, Deterministic) {
    const auto a = train_vocab(normalized_sample(), 1000);
    const auto b = train_vocab(normalized_sample(), 1000);
    EXPECT_EQ(a.serialize(), b.serialize());
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(Tokenizer, FileRoundTrip) {
    const auto& v = sample_vocab();
    const auto text = v.serialize();
    EXPECT_EQ(text.rfind("#vocab-v1 size=2100\n", 0), 0u);
    const auto path = std::filesystem::temp_directory_path() / "cotext_vocab_test.txt";
    v.save(path.string());
    const auto back = Vocabulary::load(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.serialize(), text);
    EXPECT_EQ(back.merges(), v.merges());
    EXPECT_THROW(Vocabulary::parse("#vocab-v1 size=400\nfoo\n"), Error);
}

TEST(Tokenizer, WordBoundaryPieceEscaped) {
    const std::vector<std::string> corpus = {"for x in y for x in y for z"};
    const auto v = train_vocab(corpus, 380);
    const auto text = v.serialize();
    EXPECT_NE(text.find("\xe2\x96\x81"), std::string::npos);
}
