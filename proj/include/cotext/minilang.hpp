#pragma once

// Lexer, recursive-descent parser, subtree enumeration and intra-procedural
// def-use extraction for a small Java/C-like subset.

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cotext/error.hpp"

namespace cotext::minilang {

/// Lex or parse failure with the byte offset it refers to.
class SyntaxError : public Error {
public:
    SyntaxError(ErrorCode code, const std::string& message, std::size_t position)
        : Error(code, message + " at " + std::to_string(position)), position_(position) {}
    std::size_t position() const { return position_; }

private:
    std::size_t position_;
};

enum class TokenKind { identifier, keyword, integer, string, op, punct };

inline std::string_view to_string(TokenKind k) {
    switch (k) {
    case TokenKind::identifier: return "identifier";
    case TokenKind::keyword: return "keyword";
    case TokenKind::integer: return "integer";
    case TokenKind::string: return "string";
    case TokenKind::op: return "operator";
    case TokenKind::punct: return "punctuation";
    }
    return "?";
}

struct LexToken {
    TokenKind kind;
    std::string text;
    std::size_t position = 0;
};

inline constexpr std::array<std::string_view, 52> kKeywords = {
    "abstract", "boolean",   "break",   "byte",     "case",    "catch",    "char",       "class",   "const",
    "continue", "default",   "do",      "double",   "else",    "enum",     "extends",    "false",   "final",
    "float",    "for",       "if",      "implements", "import", "instanceof", "int",      "interface", "long",
    "new",      "null",      "package", "private",  "protected", "public", "return",     "short",   "signed",
    "sizeof",   "static",    "struct",  "super",    "switch",  "this",     "throw",      "throws",  "true",
    "try",      "typedef",   "unsigned", "void",    "volatile", "while",   "synchronized"};

inline bool is_keyword(std::string_view w) { return std::find(kKeywords.begin(), kKeywords.end(), w) != kKeywords.end(); }

inline bool is_type_keyword(std::string_view w) {
    static constexpr std::array<std::string_view, 11> kws = {"boolean", "byte",  "char",     "double", "float", "int",
                                                             "long",    "short", "unsigned", "signed", "void"};
    return std::find(kws.begin(), kws.end(), w) != kws.end();
}

inline bool is_modifier(std::string_view w) {
    static constexpr std::array<std::string_view, 9> kws = {"public", "private", "protected",    "static",  "final",
                                                            "abstract", "const", "synchronized", "volatile"};
    return std::find(kws.begin(), kws.end(), w) != kws.end();
}

namespace detail {

inline bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
inline bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
inline bool digit(char c) { return c >= '0' && c <= '9'; }

// Longest first, so the first match is the maximal munch.
inline constexpr std::array<std::string_view, 39> kOperators = {
    ">>>=", "<<=", ">>=", ">>>", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=",
    "*=",   "/=",  "%=",  "&=",  "|=", "^=", "<<", ">>", "->", "::", "+",  "-",  "*",  "/",
    "%",    "=",   "<",   ">",   "!",  "&",  "|",  "^",  "~",  "?",  ":"};

inline constexpr std::string_view kPunct = "(){}[];,.";

} // namespace detail

/// Maximal-munch tokenization; whitespace and comments are dropped.
inline std::vector<LexToken> lex(std::string_view code) {
    std::vector<LexToken> out;
    std::size_t i = 0;
    const std::size_t n = code.size();
    while (i < n) {
        const char c = code[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && code[i + 1] == '/') {
            while (i < n && code[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && code[i + 1] == '*') {
            const auto end = code.find("*/", i + 2);
            if (end == std::string_view::npos) throw SyntaxError(ErrorCode::lex_error, "unterminated comment", i);
            i = end + 2;
            continue;
        }
        const std::size_t start = i;
        if (detail::ident_start(c)) {
            while (i < n && detail::ident_char(code[i])) ++i;
            const std::string w(code.substr(start, i - start));
            out.push_back({is_keyword(w) ? TokenKind::keyword : TokenKind::identifier, w, start});
            continue;
        }
        if (detail::digit(c)) {
            while (i < n && (detail::ident_char(code[i]) || (code[i] == '.' && i + 1 < n && detail::digit(code[i + 1])))) {
                ++i;
            }
            out.push_back({TokenKind::integer, std::string(code.substr(start, i - start)), start});
            continue;
        }
        if (c == '"' || c == '\'') {
            ++i;
            while (i < n && code[i] != c) {
                if (code[i] == '\n') break;
                i += code[i] == '\\' ? 2 : 1;
            }
            if (i >= n || code[i] != c) throw SyntaxError(ErrorCode::lex_error, "unterminated literal", start);
            ++i;
            out.push_back({TokenKind::string, std::string(code.substr(start, i - start)), start});
            continue;
        }
        if (detail::kPunct.find(c) != std::string_view::npos) {
            out.push_back({TokenKind::punct, std::string(1, c), start});
            ++i;
            continue;
        }
        bool matched = false;
        for (auto op : detail::kOperators) {
            if (code.compare(i, op.size(), op) == 0) {
                out.push_back({TokenKind::op, std::string(op), start});
                i += op.size();
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw SyntaxError(ErrorCode::lex_error, "unexpected character '" + std::string(1, c) + "'", start);
        }
    }
    return out;
}

/// AST node. `text` holds the operator, type spelling, member name or leaf text.
struct AstNode {
    std::string kind;
    std::string text;
    std::vector<AstNode> children;

    /// Structural equality (kinds, texts and children).
    bool operator==(const AstNode&) const = default;

    std::size_t count() const {
        std::size_t n = 1;
        for (const auto& c : children) n += c.count();
        return n;
    }
};

inline AstNode node(std::string kind, std::string text = {}, std::vector<AstNode> children = {}) {
    return {std::move(kind), std::move(text), std::move(children)};
}

class Parser {
public:
    explicit Parser(const std::vector<LexToken>& tokens) : t_(tokens) {}

    /// Root Block of top-level functions and statements.
    AstNode parse_program() {
        AstNode root = node("Block");
        while (!at_end()) {
            if (looks_like_function()) {
                root.children.push_back(function());
            } else {
                statement_into(root.children);
            }
        }
        return root;
    }

private:
    const std::vector<LexToken>& t_;
    std::size_t p_ = 0;

    bool at_end() const { return p_ >= t_.size(); }
    const LexToken* peek(std::size_t ahead = 0) const { return p_ + ahead < t_.size() ? &t_[p_ + ahead] : nullptr; }
    bool is(std::string_view text, std::size_t ahead = 0) const {
        const auto* tok = peek(ahead);
        return tok && tok->text == text && tok->kind != TokenKind::string;
    }
    bool is_ident(std::size_t ahead = 0) const {
        const auto* tok = peek(ahead);
        return tok && tok->kind == TokenKind::identifier;
    }

    [[noreturn]] void fail(const std::string& what) const {
        if (at_end()) {
            const std::size_t pos = t_.empty() ? 0 : t_.back().position + t_.back().text.size();
            throw SyntaxError(ErrorCode::parse_error, what + " (found end of input)", pos);
        }
        throw SyntaxError(ErrorCode::parse_error, what + " (found '" + t_[p_].text + "')", t_[p_].position);
    }

    void expect(std::string_view text) {
        if (!is(text)) fail("expected '" + std::string(text) + "'");
        ++p_;
    }

    std::string identifier() {
        if (!is_ident()) fail("expected identifier");
        return t_[p_++].text;
    }

    // type := (type-keyword+ | ident ('.' ident)*) ('<' type (',' type)* '>')? ('[' ']' | '*')*
    bool try_type(std::string& out) {
        const std::size_t save = p_;
        std::vector<std::string> parts;
        if (peek() && peek()->kind == TokenKind::keyword && is_type_keyword(peek()->text)) {
            while (peek() && peek()->kind == TokenKind::keyword && is_type_keyword(peek()->text)) parts.push_back(t_[p_++].text);
        } else if (is_ident()) {
            parts.push_back(t_[p_++].text);
            while (is(".") && is_ident(1)) {
                parts.push_back(t_[p_++].text);
                parts.push_back(t_[p_++].text);
            }
            if (is("<")) {
                parts.push_back(t_[p_++].text);
                bool ok = true;
                while (true) {
                    std::string inner;
                    if (!try_type(inner)) {
                        ok = false;
                        break;
                    }
                    parts.push_back(inner);
                    if (is(",")) {
                        parts.push_back(t_[p_++].text);
                        continue;
                    }
                    if (is(">")) {
                        parts.push_back(t_[p_++].text);
                        break;
                    }
                    ok = false;
                    break;
                }
                if (!ok) {
                    p_ = save;
                    return false;
                }
            }
        } else {
            return false;
        }
        while ((is("[") && is("]", 1)) || is("*")) {
            if (is("*")) {
                parts.push_back(t_[p_++].text);
            } else {
                parts.push_back(t_[p_++].text);
                parts.push_back(t_[p_++].text);
            }
        }
        out.clear();
        for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? " " : "") + parts[i];
        return true;
    }

    bool looks_like_function() {
        const std::size_t save = p_;
        while (peek() && peek()->kind == TokenKind::keyword && is_modifier(peek()->text)) ++p_;
        std::string type;
        const bool ok = try_type(type) && is_ident() && is("(", 1);
        p_ = save;
        return ok;
    }

    bool looks_like_declaration() {
        const std::size_t save = p_;
        while (peek() && peek()->kind == TokenKind::keyword && is_modifier(peek()->text)) ++p_;
        std::string type;
        bool ok = try_type(type) && is_ident();
        if (ok) ok = is("=", 1) || is(";", 1) || is(",", 1) || is("[", 1);
        p_ = save;
        return ok;
    }

    AstNode function() {
        while (peek() && peek()->kind == TokenKind::keyword && is_modifier(peek()->text)) ++p_;
        std::string type;
        if (!try_type(type)) fail("expected return type");
        const std::string name = identifier();
        expect("(");
        AstNode params = node("Params");
        if (!is(")")) {
            while (true) {
                while (is("final")) ++p_;
                std::string ptype;
                if (!try_type(ptype)) fail("expected parameter type");
                params.children.push_back(node("Param", {}, {node("Type", ptype), node("Name", identifier())}));
                if (is(",")) {
                    ++p_;
                    continue;
                }
                break;
            }
        }
        expect(")");
        if (is("throws")) {
            ++p_;
            identifier();
            while (is(",")) {
                ++p_;
                identifier();
            }
        }
        AstNode body = block();
        return node("Function", name, {node("Type", type), std::move(params), std::move(body)});
    }

    AstNode block() {
        expect("{");
        AstNode b = node("Block");
        while (!is("}")) {
            if (at_end()) fail("expected '}'");
            statement_into(b.children);
        }
        ++p_;
        return b;
    }

    // A declaration with several declarators contributes one VarDecl each.
    void statement_into(std::vector<AstNode>& out) {
        if (looks_like_declaration()) {
            auto decls = declaration();
            expect(";");
            for (auto& d : decls) out.push_back(std::move(d));
            return;
        }
        out.push_back(statement());
    }

    std::vector<AstNode> declaration() {
        while (peek() && peek()->kind == TokenKind::keyword && is_modifier(peek()->text)) ++p_;
        std::string type;
        if (!try_type(type)) fail("expected type");
        std::vector<AstNode> out;
        while (true) {
            AstNode d = node("VarDecl", {}, {node("Type", type), node("Name", identifier())});
            while (is("[")) {
                ++p_;
                AstNode dim = node("Dim");
                if (!is("]")) dim.children.push_back(expression());
                expect("]");
                d.children.push_back(std::move(dim));
            }
            if (is("=")) {
                ++p_;
                d.children.push_back(expression());
            }
            out.push_back(std::move(d));
            if (!is(",")) break;
            ++p_;
        }
        return out;
    }

    AstNode single_statement() {
        std::vector<AstNode> tmp;
        statement_into(tmp);
        if (tmp.size() == 1) return std::move(tmp[0]);
        return node("Block", {}, std::move(tmp));
    }

    AstNode simple_or_empty(std::string_view terminator) {
        if (is(terminator)) return node("Empty");
        if (looks_like_declaration()) {
            auto decls = declaration();
            if (decls.size() != 1) fail("only one declarator allowed here");
            return std::move(decls[0]);
        }
        return as_statement(expression());
    }

    static AstNode as_statement(AstNode e) {
        if (e.kind == "Assign") return e;
        return node("ExprStmt", {}, {std::move(e)});
    }

    AstNode statement() {
        if (at_end()) fail("expected statement");
        if (is("{")) return block();
        if (is("if")) {
            ++p_;
            expect("(");
            AstNode cond = expression();
            expect(")");
            AstNode then = single_statement();
            AstNode n = node("If", {}, {std::move(cond), std::move(then)});
            if (is("else")) {
                ++p_;
                n.children.push_back(single_statement());
            }
            return n;
        }
        if (is("while")) {
            ++p_;
            expect("(");
            AstNode cond = expression();
            expect(")");
            return node("While", {}, {std::move(cond), single_statement()});
        }
        if (is("for")) {
            ++p_;
            expect("(");
            AstNode init = simple_or_empty(";");
            expect(";");
            AstNode cond = is(";") ? node("Empty") : expression();
            expect(";");
            AstNode update = simple_or_empty(")");
            expect(")");
            return node("For", {}, {std::move(init), std::move(cond), std::move(update), single_statement()});
        }
        if (is("return")) {
            ++p_;
            AstNode r = node("Return");
            if (!is(";")) r.children.push_back(expression());
            expect(";");
            return r;
        }
        if (is("break") || is("continue")) {
            AstNode n = node(t_[p_].text == "break" ? "Break" : "Continue");
            ++p_;
            expect(";");
            return n;
        }
        if (is(";")) fail("expected statement");
        AstNode e = expression();
        expect(";");
        return as_statement(std::move(e));
    }

    // Precedence climbing, lowest first.
    AstNode expression() { return assignment(); }

    AstNode assignment() {
        AstNode lhs = ternary();
        static constexpr std::array<std::string_view, 12> ops = {"=",  "+=", "-=", "*=",  "/=",  "%=",
                                                                 "&=", "|=", "^=", "<<=", ">>=", ">>>="};
        for (auto op : ops) {
            if (is(op)) {
                const bool target = lhs.kind == "Name" || lhs.kind == "Index" || lhs.kind == "Member" ||
                                    (lhs.kind == "Unary" && lhs.text == "*");
                if (!target) fail("invalid assignment target");
                ++p_;
                AstNode rhs = assignment();
                return node("Assign", std::string(op), {std::move(lhs), std::move(rhs)});
            }
        }
        return lhs;
    }

    AstNode ternary() {
        AstNode c = binary(0);
        if (!is("?")) return c;
        ++p_;
        AstNode a = expression();
        expect(":");
        AstNode b = ternary();
        return node("Ternary", {}, {std::move(c), std::move(a), std::move(b)});
    }

    static int precedence(std::string_view op) {
        static const std::map<std::string_view, int> table = {
            {"||", 1}, {"&&", 2}, {"|", 3},  {"^", 4},  {"&", 5},  {"==", 6},  {"!=", 6},  {"<", 7},
            {">", 7},  {"<=", 7}, {">=", 7}, {"<<", 8}, {">>", 8}, {">>>", 8}, {"+", 9},   {"-", 9},
            {"*", 10}, {"/", 10}, {"%", 10}};
        auto it = table.find(op);
        return it == table.end() ? -1 : it->second;
    }

    AstNode binary(int min_prec) {
        AstNode lhs = unary();
        while (peek() && peek()->kind == TokenKind::op) {
            const int prec = precedence(peek()->text);
            if (prec < 0 || prec < min_prec) break;
            const std::string op = t_[p_++].text;
            AstNode rhs = binary(prec + 1);
            lhs = node("BinOp", op, {std::move(lhs), std::move(rhs)});
        }
        return lhs;
    }

    bool cast_ahead() const {
        if (!is("(")) return false;
        std::size_t k = 1;
        bool any = false;
        while (const auto* tok = peek(k)) {
            if (tok->kind == TokenKind::keyword && is_type_keyword(tok->text)) {
                any = true;
                ++k;
                continue;
            }
            if (tok->text == "*" && any) {
                ++k;
                continue;
            }
            break;
        }
        return any && is(")", k);
    }

    AstNode unary() {
        if (peek() && peek()->kind == TokenKind::op) {
            const std::string op = peek()->text;
            if (op == "!" || op == "-" || op == "+" || op == "~" || op == "++" || op == "--" || op == "*" || op == "&") {
                ++p_;
                return node("Unary", op, {unary()});
            }
        }
        if (cast_ahead()) {
            ++p_;
            std::string type;
            try_type(type);
            expect(")");
            return node("Cast", {}, {node("Type", type), unary()});
        }
        return postfix(primary());
    }

    AstNode postfix(AstNode e) {
        while (true) {
            if (is("(")) {
                ++p_;
                AstNode call = node("Call", {}, {std::move(e)});
                arguments(call.children);
                e = std::move(call);
            } else if (is("[")) {
                ++p_;
                AstNode idx = expression();
                expect("]");
                e = node("Index", {}, {std::move(e), std::move(idx)});
            } else if (is(".")) {
                ++p_;
                e = node("Member", identifier(), {std::move(e)});
            } else if (is("++") || is("--")) {
                e = node("Postfix", t_[p_++].text, {std::move(e)});
            } else {
                return e;
            }
        }
    }

    // Consumes "args )".
    void arguments(std::vector<AstNode>& out) {
        if (is(")")) {
            ++p_;
            return;
        }
        while (true) {
            out.push_back(expression());
            if (is(",")) {
                ++p_;
                continue;
            }
            expect(")");
            return;
        }
    }

    AstNode primary() {
        if (at_end()) fail("expected expression");
        const LexToken& tok = t_[p_];
        if (tok.kind == TokenKind::identifier) {
            ++p_;
            return node("Name", tok.text);
        }
        if (tok.kind == TokenKind::integer || tok.kind == TokenKind::string) {
            ++p_;
            return node("Literal", tok.text);
        }
        if (tok.kind == TokenKind::keyword) {
            if (tok.text == "true" || tok.text == "false" || tok.text == "null") {
                ++p_;
                return node("Literal", tok.text);
            }
            if (tok.text == "this") {
                ++p_;
                return node("This");
            }
            if (tok.text == "new") {
                ++p_;
                std::string type;
                if (peek() && peek()->kind == TokenKind::keyword && is_type_keyword(peek()->text)) {
                    type = t_[p_++].text;
                } else {
                    type = identifier();
                    while (is(".") && is_ident(1)) {
                        type += " . ";
                        ++p_;
                        type += t_[p_++].text;
                    }
                }
                if (is("[")) {
                    ++p_;
                    AstNode size = expression();
                    expect("]");
                    return node("NewArray", type, {std::move(size)});
                }
                expect("(");
                AstNode n = node("New", type);
                arguments(n.children);
                return n;
            }
        }
        if (is("(")) {
            ++p_;
            AstNode e = expression();
            expect(")");
            return e;
        }
        fail("expected expression");
    }
};

inline AstNode parse(const std::vector<LexToken>& tokens) { return Parser(tokens).parse_program(); }

inline AstNode parse_code(std::string_view code) { return parse(lex(code)); }

// ---------------------------------------------------------------------------
// Pretty printer: space-separated tokens; compound operands are parenthesized
// so that re-parsing restores the same tree.

namespace detail {

inline void emit(std::string& out, std::string_view s) {
    if (!out.empty()) out += ' ';
    out += s;
}

inline void print_expr(const AstNode& n, std::string& out);

inline void print_operand(const AstNode& n, std::string& out) {
    const bool atomic = n.kind == "Name" || n.kind == "Literal" || n.kind == "This" || n.kind == "Call" ||
                        n.kind == "Index" || n.kind == "Member" || n.kind == "New" || n.kind == "NewArray";
    if (atomic) {
        print_expr(n, out);
        return;
    }
    emit(out, "(");
    print_expr(n, out);
    emit(out, ")");
}

inline void print_args(const AstNode& n, std::size_t first, std::string& out) {
    emit(out, "(");
    for (std::size_t i = first; i < n.children.size(); ++i) {
        if (i > first) emit(out, ",");
        print_expr(n.children[i], out);
    }
    emit(out, ")");
}

inline void print_expr(const AstNode& n, std::string& out) {
    const auto& k = n.kind;
    if (k == "Name" || k == "Literal") {
        emit(out, n.text);
    } else if (k == "This") {
        emit(out, "this");
    } else if (k == "BinOp") {
        print_operand(n.children[0], out);
        emit(out, n.text);
        print_operand(n.children[1], out);
    } else if (k == "Unary") {
        emit(out, n.text);
        print_operand(n.children[0], out);
    } else if (k == "Postfix") {
        print_operand(n.children[0], out);
        emit(out, n.text);
    } else if (k == "Assign") {
        print_operand(n.children[0], out);
        emit(out, n.text);
        print_operand(n.children[1], out);
    } else if (k == "Ternary") {
        print_operand(n.children[0], out);
        emit(out, "?");
        print_operand(n.children[1], out);
        emit(out, ":");
        print_operand(n.children[2], out);
    } else if (k == "Cast") {
        emit(out, "(");
        emit(out, n.children[0].text);
        emit(out, ")");
        print_operand(n.children[1], out);
    } else if (k == "Call") {
        print_operand(n.children[0], out);
        print_args(n, 1, out);
    } else if (k == "Index") {
        print_operand(n.children[0], out);
        emit(out, "[");
        print_expr(n.children[1], out);
        emit(out, "]");
    } else if (k == "Member") {
        print_operand(n.children[0], out);
        emit(out, ".");
        emit(out, n.text);
    } else if (k == "New") {
        emit(out, "new");
        emit(out, n.text);
        print_args(n, 0, out);
    } else if (k == "NewArray") {
        emit(out, "new");
        emit(out, n.text);
        emit(out, "[");
        print_expr(n.children[0], out);
        emit(out, "]");
    } else {
        throw Error(ErrorCode::parse_error, "cannot print expression kind " + k);
    }
}

inline void print_stmt(const AstNode& n, std::string& out);

inline void print_simple(const AstNode& n, std::string& out) {
    if (n.kind == "Empty") return;
    if (n.kind == "VarDecl") {
        emit(out, n.children[0].text);
        emit(out, n.children[1].text);
        std::size_t i = 2;
        for (; i < n.children.size() && n.children[i].kind == "Dim"; ++i) {
            emit(out, "[");
            if (!n.children[i].children.empty()) print_expr(n.children[i].children[0], out);
            emit(out, "]");
        }
        if (i < n.children.size()) {
            emit(out, "=");
            print_expr(n.children[i], out);
        }
        return;
    }
    if (n.kind == "ExprStmt") {
        print_expr(n.children[0], out);
        return;
    }
    print_expr(n, out);
}

inline void print_stmt(const AstNode& n, std::string& out) {
    const auto& k = n.kind;
    if (k == "Block") {
        emit(out, "{");
        for (const auto& c : n.children) print_stmt(c, out);
        emit(out, "}");
    } else if (k == "Function") {
        emit(out, n.children[0].text);
        emit(out, n.text);
        emit(out, "(");
        const auto& params = n.children[1].children;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (i) emit(out, ",");
            emit(out, params[i].children[0].text);
            emit(out, params[i].children[1].text);
        }
        emit(out, ")");
        print_stmt(n.children[2], out);
    } else if (k == "If") {
        emit(out, "if");
        emit(out, "(");
        print_expr(n.children[0], out);
        emit(out, ")");
        print_stmt(n.children[1], out);
        if (n.children.size() > 2) {
            emit(out, "else");
            print_stmt(n.children[2], out);
        }
    } else if (k == "While") {
        emit(out, "while");
        emit(out, "(");
        print_expr(n.children[0], out);
        emit(out, ")");
        print_stmt(n.children[1], out);
    } else if (k == "For") {
        emit(out, "for");
        emit(out, "(");
        print_simple(n.children[0], out);
        emit(out, ";");
        if (n.children[1].kind != "Empty") print_expr(n.children[1], out);
        emit(out, ";");
        print_simple(n.children[2], out);
        emit(out, ")");
        print_stmt(n.children[3], out);
    } else if (k == "Return") {
        emit(out, "return");
        if (!n.children.empty()) print_expr(n.children[0], out);
        emit(out, ";");
    } else if (k == "Break") {
        emit(out, "break ;");
    } else if (k == "Continue") {
        emit(out, "continue ;");
    } else {
        print_simple(n, out);
        emit(out, ";");
    }
}

} // namespace detail

/// Source text for a root Block (its statements are printed without braces).
inline std::string pretty_print(const AstNode& root) {
    std::string out;
    if (root.kind == "Block") {
        for (const auto& c : root.children) detail::print_stmt(c, out);
    } else {
        detail::print_stmt(root, out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subtree multiset.

inline std::string serialize_subtree(const AstNode& n) {
    std::string s = "(" + n.kind;
    if (n.kind == "Name") {
        s += " var";
    } else if (n.kind == "Literal") {
        s += " lit";
    } else if (!n.text.empty() && n.kind != "Function") {
        s += " " + n.text;
    }
    for (const auto& c : n.children) s += " " + serialize_subtree(c);
    return s + ")";
}

/// One serialization per node, as a multiset (sorted).
inline std::multiset<std::string> subtrees(const AstNode& root) {
    std::multiset<std::string> out;
    std::vector<const AstNode*> stack = {&root};
    while (!stack.empty()) {
        const AstNode* n = stack.back();
        stack.pop_back();
        out.insert(serialize_subtree(*n));
        for (const auto& c : n->children) stack.push_back(&c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Def-use edges.

struct DataflowEdge {
    std::size_t def_site = 0;
    std::size_t use_site = 0;
    std::string variable = "var";

    auto operator<=>(const DataflowEdge&) const = default;
};

struct DataflowGraph {
    std::set<DataflowEdge> edges;
};

namespace detail {

struct UseDef {
    std::vector<std::string> uses;
    std::vector<std::string> defs;
};

inline void collect_expr(const AstNode& n, UseDef& ud);

inline void collect_target(const AstNode& target, bool also_use, UseDef& ud) {
    if (target.kind == "Name") {
        if (also_use) ud.uses.push_back(target.text);
        ud.defs.push_back(target.text);
    } else {
        collect_expr(target, ud);
    }
}

inline void collect_expr(const AstNode& n, UseDef& ud) {
    const auto& k = n.kind;
    if (k == "Name") {
        ud.uses.push_back(n.text);
    } else if (k == "Assign") {
        collect_expr(n.children[1], ud);
        collect_target(n.children[0], n.text != "=", ud);
    } else if (k == "Postfix" || (k == "Unary" && (n.text == "++" || n.text == "--"))) {
        collect_target(n.children[0], true, ud);
    } else if (k == "Call") {
        if (n.children[0].kind != "Name") collect_expr(n.children[0], ud);
        for (std::size_t i = 1; i < n.children.size(); ++i) collect_expr(n.children[i], ud);
    } else if (k == "Cast") {
        collect_expr(n.children[1], ud);
    } else {
        for (const auto& c : n.children) collect_expr(c, ud);
    }
}

using Reach = std::map<std::string, std::set<std::size_t>>;

inline void merge_into(Reach& a, const Reach& b) {
    for (const auto& [v, s] : b) a[v].insert(s.begin(), s.end());
}

class Dataflow {
public:
    DataflowGraph graph;

    void program(const AstNode& root) {
        Reach global;
        for (const auto& s : root.children) {
            if (s.kind == "Function") {
                Reach local;
                const std::size_t site = next_++;
                for (const auto& p : s.children[1].children) local[p.children[1].text] = {site};
                stmt(s.children[2], local);
            } else {
                stmt(s, global);
            }
        }
    }

private:
    std::size_t next_ = 0;

    void site(const UseDef& ud, Reach& r) {
        const std::size_t here = next_++;
        for (const auto& u : ud.uses) {
            auto it = r.find(u);
            if (it == r.end()) continue;
            for (std::size_t d : it->second) graph.edges.insert({d, here, "var"});
        }
        for (const auto& d : ud.defs) r[d] = {here};
    }

    void simple(const AstNode& n, Reach& r) {
        UseDef ud;
        if (n.kind == "Empty") return;
        if (n.kind == "VarDecl") {
            bool has_init = false;
            for (std::size_t i = 2; i < n.children.size(); ++i) {
                if (n.children[i].kind == "Dim") {
                    for (const auto& c : n.children[i].children) collect_expr(c, ud);
                } else {
                    collect_expr(n.children[i], ud);
                    has_init = true;
                }
            }
            if (has_init) ud.defs.push_back(n.children[1].text);
        } else {
            collect_expr(n.kind == "ExprStmt" || n.kind == "Return" ? (n.children.empty() ? n : n.children[0]) : n, ud);
        }
        site(ud, r);
    }

    void stmt(const AstNode& n, Reach& r) {
        const auto& k = n.kind;
        if (k == "Block") {
            for (const auto& c : n.children) stmt(c, r);
        } else if (k == "If") {
            UseDef cond;
            collect_expr(n.children[0], cond);
            site(cond, r);
            Reach then = r;
            stmt(n.children[1], then);
            if (n.children.size() > 2) {
                Reach other = r;
                stmt(n.children[2], other);
                merge_into(then, other);
                r = std::move(then);
            } else {
                merge_into(r, then);
            }
        } else if (k == "While") {
            UseDef cond;
            collect_expr(n.children[0], cond);
            site(cond, r);
            Reach body = r;
            stmt(n.children[1], body);
            merge_into(r, body);
        } else if (k == "For") {
            simple(n.children[0], r);
            UseDef cond;
            if (n.children[1].kind != "Empty") collect_expr(n.children[1], cond);
            site(cond, r);
            Reach body = r;
            stmt(n.children[3], body);
            simple(n.children[2], body);
            merge_into(r, body);
        } else if (k == "Break" || k == "Continue") {
            site({}, r);
        } else {
            simple(n, r);
        }
    }
};

} // namespace detail

/// Def-use edges between statement sites numbered in execution order. Branch
/// arms are merged as a may-reach union; loop bodies are taken at most once.
inline DataflowGraph dataflow(const AstNode& root) {
    detail::Dataflow df;
    df.program(root);
    return std::move(df.graph);
}

} // namespace cotext::minilang
