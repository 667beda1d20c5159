#include <gtest/gtest.h>

#include <fstream>

#include "json.hpp"

#include "cotext/minilang.hpp"
#include "support/data.hpp"
#include "support/minilang_gen.hpp"
#include "support/oracles.hpp"

using namespace cotext;
using namespace cotext::minilang;

namespace {

std::vector<std::string> subset_functions() {
    std::vector<std::string> out;
    for (const char* file : {"tasks/generation.jsonl", "tasks/defect.jsonl", "tasks/refinement_small.jsonl",
                             "tasks/refinement_medium.jsonl"}) {
        std::ifstream in(testing_support::data_path(file));
        std::string line;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            for (const char* key : {"code", "buggy", "fixed"}) {
                if (j.contains(key)) out.push_back(j[key].get<std::string>());
            }
        }
    }
    return out;
}


} // namespace

TEST(Lex, SimpleAssignment) {
    const auto toks = lex("a = b + 1 ;");
    ASSERT_EQ(toks.size(), 6u);
    const std::vector<std::pair<TokenKind, std::string>> want = {
        {TokenKind::identifier, "a"}, {TokenKind::op, "="},      {TokenKind::identifier, "b"},
        {TokenKind::op, "+"},         {TokenKind::integer, "1"}, {TokenKind::punct, ";"}};
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(toks[i].kind, want[i].first);
        EXPECT_EQ(toks[i].text, want[i].second);
    }
}

TEST(Lex, EmptyInput) { EXPECT_TRUE(lex("").empty()); }

TEST(Lex, MaximalMunchAndComments) {
    const auto toks = lex("x>>>=y>>2; // tail\n/* block */ i++ != --j");
    std::vector<std::string> texts;
    for (const auto& t : toks) texts.push_back(t.text);
    EXPECT_EQ(texts, (std::vector<std::string>{"x", ">>>=", "y", ">>", "2", ";", "i", "++", "!=", "--", "j"}));
    EXPECT_EQ(lex("\"a b\" 'c'")[0].kind, TokenKind::string);
    EXPECT_EQ(lex("while")[0].kind, TokenKind::keyword);
}

TEST(Lex, UnknownCharacterReportsPosition) {
    try {
        lex("a = b # c");
        FAIL() << "expected LEX_ERROR";
    } catch (const SyntaxError& e) {
        EXPECT_EQ(e.code(), ErrorCode::lex_error);
        EXPECT_EQ(e.position(), 6u);
    }
    EXPECT_THROW(lex("s = \"open"), SyntaxError);
}

TEST(Lex, CorpusFunctionsRelexFromSpacedText) {
    const auto fns = subset_functions();
    ASSERT_GE(fns.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) {
        const auto toks = lex(fns[i]);
        for (std::size_t k = 1; k < toks.size(); ++k) ASSERT_LT(toks[k - 1].position, toks[k].position);
        std::string joined;
        for (const auto& t : toks) joined += (joined.empty() ? "" : " ") + t.text;
        const auto again = lex(joined);
        ASSERT_EQ(again.size(), toks.size()) << fns[i];
        for (std::size_t k = 0; k < toks.size(); ++k) {
            EXPECT_EQ(again[k].kind, toks[k].kind);
            EXPECT_EQ(again[k].text, toks[k].text);
        }
    }
}

TEST(Parse, SingleAssignment) {
    const AstNode want = node("Block", {}, {node("Assign", "=", {node("Name", "a"), node("Literal", "1")})});
    EXPECT_EQ(parse_code("a = 1 ;"), want);
}

TEST(Parse, MissingExpressionPointsAtSemicolon) {
    try {
        parse_code("a = ;");
        FAIL() << "expected PARSE_ERROR";
    } catch (const SyntaxError& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse_error);
        EXPECT_EQ(e.position(), 4u);
    }
}

TEST(Parse, MultiplicationBindsTighterThanAddition) {
    const AstNode ast = parse_code("a = b + c * d ;");
    const AstNode& rhs = ast.children.at(0).children.at(1);
    EXPECT_EQ(rhs.kind, "BinOp");
    EXPECT_EQ(rhs.text, "+");
    EXPECT_EQ(rhs.children[1].text, "*");
    const AstNode logic = parse_code("x = a || b && c == d + 1 ;");
    const AstNode& cmp = logic.children[0].children[1];
    EXPECT_EQ(cmp.text, "||");
    EXPECT_EQ(cmp.children[1].text, "&&");
    EXPECT_EQ(cmp.children[1].children[1].text, "==");
}

TEST(Parse, LeftAssociativeSubtraction) {
    const AstNode ast = parse_code("x = a - b - c ;");
    const AstNode& rhs = ast.children[0].children[1];
    EXPECT_EQ(rhs.children[0].kind, "BinOp");
    EXPECT_EQ(rhs.children[1].kind, "Name");
}

TEST(Parse, FunctionsFromTheTaskData) {
    const auto fns = subset_functions();
    for (const auto& code : fns) {
        const AstNode ast = parse_code(code);
        ASSERT_EQ(ast.children.size(), 1u) << code;
        EXPECT_EQ(ast.children[0].kind, "Function") << code;
        EXPECT_EQ(parse_code(pretty_print(ast)), ast) << code;
    }
}

TEST(Parse, DeclarationsAndControlFlow) {
    const AstNode ast = parse_code(
        "public static int f ( int [ ] xs , char * p ) throws IOException {"
        "  int a = 0 , b ; List < String > names = new ArrayList ( ) ;"
        "  for ( int i = 0 ; i < n ; i ++ ) { if ( xs [ i ] > a ) a = xs [ i ] ; else continue ; }"
        "  while ( ! done ( ) ) { b += ( int ) p [ 0 ] ; }"
        "  return a > b ? a : b ; }");
    const AstNode& fn = ast.children[0];
    EXPECT_EQ(fn.kind, "Function");
    EXPECT_EQ(fn.text, "f");
    EXPECT_EQ(fn.children[1].children.size(), 2u);
    EXPECT_EQ(fn.children[1].children[1].children[0].text, "char *");
    const AstNode& body = fn.children[2];
    ASSERT_EQ(body.children.size(), 6u);
    EXPECT_EQ(body.children[0].kind, "VarDecl");
    EXPECT_EQ(body.children[1].kind, "VarDecl");
    EXPECT_EQ(body.children[2].children[0].text, "List < String >");
    EXPECT_EQ(body.children[3].kind, "For");
    EXPECT_EQ(body.children[4].kind, "While");
    EXPECT_EQ(body.children[5].children[0].kind, "Ternary");
}

TEST(Parse, RejectsMalformedInput) {
    for (const char* bad : {"if ( a ) { b = 1 ;", "int f ( { }", "x = ( 1 + 2 ;", "1 = x ;", "return", "else x = 1 ;"}) {
        EXPECT_THROW(parse_code(bad), SyntaxError) << bad;
    }
}

TEST(Parse, PrettyPrintRoundTripOnGeneratedTrees) {
    testing_support::TreeGenerator gen(1234);
    for (int i = 0; i < 500; ++i) {
        const AstNode ast = gen.program();
        const std::string text = pretty_print(ast);
        AstNode back;
        ASSERT_NO_THROW(back = parse(lex(text))) << text;
        ASSERT_EQ(back, ast) << text;
    }
}

TEST(Subtrees, SingleAssignment) {
    const auto s = subtrees(parse_code("a = 1 ;"));
    const std::multiset<std::string> want = {"(Block (Assign = (Name var) (Literal lit)))",
                                             "(Assign = (Name var) (Literal lit))", "(Name var)", "(Literal lit)"};
    EXPECT_EQ(s, want);
}

TEST(Subtrees, InvariantToRenaming) {
    const auto a = subtrees(parse_code("int f ( int x ) { int y = x * 2 ; return y + 1 ; }"));
    const auto b = subtrees(parse_code("int g ( int p ) { int q = p * 2 ; return q + 1 ; }"));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, subtrees(parse_code("int f ( int x ) { int y = x * 2 ; return y + 1 ; }")));
    EXPECT_NE(a, subtrees(parse_code("int f ( int x ) { int y = x * 2 ; return y - 1 ; }")));
}

TEST(Subtrees, OneEntryPerNode) {
    testing_support::TreeGenerator gen(99);
    for (int i = 0; i < 50; ++i) {
        const AstNode ast = gen.program();
        EXPECT_EQ(subtrees(ast).size(), ast.count());
    }
}

TEST(Dataflow, StraightLineEdge) {
    const auto g = dataflow(parse_code("a = 1 ; b = a + 2 ;"));
    ASSERT_EQ(g.edges.size(), 1u);
    const auto& e = *g.edges.begin();
    EXPECT_EQ(e.def_site, 0u);
    EXPECT_EQ(e.use_site, 1u);
    EXPECT_EQ(e.variable, "var");
}

TEST(Dataflow, UndefinedUseHasNoEdge) { EXPECT_TRUE(dataflow(parse_code("b = a ;")).edges.empty()); }

TEST(Dataflow, BothArmsReachTheJoin) {
    const auto g = dataflow(parse_code("if ( c ) { a = 1 ; } else { a = 2 ; } b = a ;"));
    EXPECT_EQ(testing_support::edge_pairs(g), (std::set<testing_support::Edge>{{1, 3}, {2, 3}}));
}

TEST(Dataflow, ParametersAndCompoundAssignment) {
    // sites: 0 function, 1 decl, 2 while cond, 3 body, 4 return
    const auto g = dataflow(parse_code("int f ( int n ) { int s = 0 ; while ( n > 0 ) { s += n ; } return s ; }"));
    EXPECT_EQ(testing_support::edge_pairs(g), (std::set<testing_support::Edge>{{0, 2}, {0, 3}, {1, 3}, {1, 4}, {3, 4}}));
}

TEST(Dataflow, MatchesPathEnumerationOracle) {
    testing_support::FlowGenerator gen(7);
    for (int i = 0; i < 300; ++i) {
        const auto p = gen.program();
        const auto g = dataflow(parse_code(p.source));
        ASSERT_EQ(testing_support::edge_pairs(g), testing_support::oracle_edges(p.items)) << p.source;
    }
}

TEST(Dataflow, EdgesPointBackward) {
    testing_support::TreeGenerator gen(5);
    for (int i = 0; i < 200; ++i) {
        for (const auto& e : dataflow(gen.program()).edges) EXPECT_LT(e.def_site, e.use_site);
    }
}
