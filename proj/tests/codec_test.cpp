#include <gtest/gtest.h>

#include <filesystem>

#include "cotext/codec.hpp"
#include "cotext/rng.hpp"
#include "support/data.hpp"

using namespace cotext;

namespace {

const CodecTable& table() {
    static const CodecTable t = CodecTable::default_table();
    return t;
}

} // namespace

TEST(Codec, NormalizeSubstitutesGlyphs) {
    EXPECT_EQ(normalize("x[i]", table()), "x OBRACK i CBRACK ");
    EXPECT_EQ(normalize("plain text", table()), "plain text");
    EXPECT_EQ(normalize("if (a) { b = c; }", table()), "if (a)  OBRACE  b = c;  CBRACE ");
}

TEST(Codec, DenormalizeInvertsExamples) {
    EXPECT_EQ(denormalize("x OBRACK i CBRACK", table()), "x[i]");
    EXPECT_EQ(denormalize("x OBRACK i CBRACK ", table()), "x[i]");
    EXPECT_EQ(denormalize("no markers here", table()), "no markers here");
    EXPECT_EQ(denormalize("XOBRACK OBRACKS", table()), "XOBRACK OBRACKS");
}

TEST(Codec, Validate) {
    EXPECT_FALSE(validate("x OBRACK y", table()));
    EXPECT_TRUE(validate("x [ y", table()));
    EXPECT_FALSE(validate("OBRACK", table()));
    EXPECT_FALSE(validate("a(OBRACK)", table()));
    EXPECT_TRUE(validate("MY_OBRACK_X", table()));
    EXPECT_THROW(normalize("x CBRACE", table()), Error);
    try {
        normalize("x CBRACE", table());
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::reserved_marker_present);
    }
}

TEST(Codec, TableInvariantsRejected) {
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"{", "OB"}, {"[", "OB"}}), Error);
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"{", "OBRACE"}, {"[", "BRACE"}}), Error);
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"{", "OBR{"}}), Error);
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"{", "obrace"}}), Error);
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"ab", "AB"}}), Error);
    EXPECT_THROW(CodecTable(std::vector<CodecEntry>{{"{", "A"}, {"{", "B"}}), Error);
    EXPECT_NO_THROW(CodecTable(std::vector<CodecEntry>{{"\xc2\xa7", "SECTION"}}));
}

TEST(Codec, SerializeRoundTrip) {
    const auto text = table().serialize();
    EXPECT_EQ(text.substr(0, 9), "#codec-v1");
    const auto back = CodecTable::parse(text);
    EXPECT_EQ(back.serialize(), text);
    const auto path = std::filesystem::temp_directory_path() / "cotext_codec_table.txt";
    table().save(path.string());
    EXPECT_EQ(CodecTable::load(path.string()).serialize(), text);
    std::filesystem::remove(path);
    EXPECT_THROW(CodecTable::parse("{\tOBRACE\n"), Error);
}

TEST(Codec, RoundTripOnCorpusSample) {
    const auto code = testing_support::corpus_code();
    ASSERT_GE(code.size(), 990u);
    for (const auto& s : code) {
        const auto n = normalize(s, table());
        for (const auto& e : table().entries()) EXPECT_EQ(n.find(e.glyph), std::string::npos);
        EXPECT_EQ(denormalize(n, table()), s);
    }
}

TEST(Codec, ValidateRejectionRateOnSample) {
    std::ifstream in(testing_support::data_path("corpus/codesearchnet_sample.jsonl"));
    IngestStats stats;
    ingest(in, table(), stats);
    EXPECT_LT(static_cast<double>(stats.rejected), 0.001 * static_cast<double>(stats.lines));
}

TEST(Codec, RandomRoundTripProperty) {
    const std::string alphabet = "ab_ {}[]$^~`\\|<>OBRACKCBRACE\n\t()";
    Rng rng(7);
    int checked = 0;
    for (int i = 0; i < 5000; ++i) {
        std::string s;
        const auto len = rng.below(30);
        for (std::uint64_t k = 0; k < len; ++k) s += alphabet[rng.below(alphabet.size())];
        if (!validate(s, table())) continue;
        ++checked;
        ASSERT_EQ(denormalize(normalize(s, table()), table()), s) << s;
    }
    EXPECT_GT(checked, 1000);
}

TEST(Codec, DenormalizeIdentityWithoutMarkers) {
    for (const auto& s : testing_support::corpus_code()) EXPECT_EQ(denormalize(s, table()), s);
}
