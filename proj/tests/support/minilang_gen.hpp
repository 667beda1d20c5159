#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cotext/minilang.hpp"

namespace testing_support {

using cotext::minilang::AstNode;
using cotext::minilang::node;

// Random trees drawn from the parser's grammar, restricted to forms whose
// printed text is unambiguous.
class TreeGenerator {
public:
    explicit TreeGenerator(std::uint64_t seed) : rng_(seed) {}

    AstNode program() {
        AstNode root = node("Block");
        const int n = pick(1, 4);
        for (int i = 0; i < n; ++i) root.children.push_back(chance(0.4) ? function() : statement(2));
        return root;
    }

private:
    std::mt19937_64 rng_;

    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
    template <class T> const T& one_of(const std::vector<T>& xs) {
        return xs[static_cast<std::size_t>(pick(0, static_cast<int>(xs.size()) - 1))];
    }

    std::string ident() { return one_of<std::string>({"a", "b", "count", "x1", "value", "buf", "n", "total"}); }
    std::string type() {
        return one_of<std::string>({"int", "char", "String", "double", "boolean", "List < String >", "int [ ]",
                                    "char *", "Map < String , Integer >", "long"});
    }

    AstNode name() { return node("Name", ident()); }
    AstNode literal() {
        return node("Literal", one_of<std::string>({"0", "1", "42", "\"hi there\"", "'c'", "true", "false", "null",
                                                    "3.5"}));
    }

    AstNode lvalue(int depth) {
        switch (depth > 0 ? pick(0, 2) : 0) {
        case 1: return node("Index", {}, {name(), expr(depth - 1)});
        case 2: return node("Member", ident(), {chance(0.3) ? node("This") : name()});
        default: return name();
        }
    }

    AstNode call(int depth) {
        AstNode callee = chance(0.7) ? name() : node("Member", ident(), {name()});
        AstNode c = node("Call", {}, {std::move(callee)});
        const int args = pick(0, 3);
        for (int i = 0; i < args; ++i) c.children.push_back(expr(depth - 1));
        return c;
    }

    AstNode expr(int depth) {
        if (depth <= 0) return chance(0.5) ? name() : literal();
        switch (pick(0, 11)) {
        case 0: return name();
        case 1: return literal();
        case 2:
        case 3:
            return node("BinOp",
                        one_of<std::string>({"+", "-", "*", "/", "%", "<", ">", "<=", ">=", "==", "!=", "&&", "||",
                                             "&", "|", "^", "<<", ">>", ">>>"}),
                        {expr(depth - 1), expr(depth - 1)});
        case 4: return node("Unary", one_of<std::string>({"!", "-", "~", "++", "--", "*", "&"}), {expr(depth - 1)});
        case 5: return node("Postfix", one_of<std::string>({"++", "--"}), {lvalue(depth - 1)});
        case 6: return node("Ternary", {}, {expr(depth - 1), expr(depth - 1), expr(depth - 1)});
        case 7: return call(depth);
        case 8: return node("Index", {}, {name(), expr(depth - 1)});
        case 9:
            return chance(0.5) ? node("Cast", {}, {node("Type", one_of<std::string>({"int", "char *", "double"})),
                                                   expr(depth - 1)})
                               : node("Member", ident(), {call(depth)});
        case 10: {
            if (chance(0.5)) return node("NewArray", one_of<std::string>({"int", "Foo"}), {expr(depth - 1)});
            AstNode n = node("New", one_of<std::string>({"Foo", "java . util . ArrayList"}));
            const int args = pick(0, 2);
            for (int i = 0; i < args; ++i) n.children.push_back(expr(depth - 1));
            return n;
        }
        default:
            return node("Assign", one_of<std::string>({"=", "+=", "<<=", ">>>="}), {lvalue(depth - 1), expr(depth - 1)});
        }
    }

    AstNode simple(int depth) {
        switch (pick(0, 3)) {
        case 0: {
            AstNode d = node("VarDecl", {}, {node("Type", type()), name()});
            if (chance(0.3)) d.children.push_back(node("Dim", {}, {expr(1)}));
            if (chance(0.6)) d.children.push_back(expr(depth));
            return d;
        }
        case 1: return node("ExprStmt", {}, {call(depth)});
        case 2: return node("ExprStmt", {}, {node("Postfix", "++", {lvalue(1)})});
        default: return node("Assign", one_of<std::string>({"=", "+=", "-=", "*=", "|="}), {lvalue(1), expr(depth)});
        }
    }

    AstNode block(int depth) {
        AstNode b = node("Block");
        const int n = pick(0, 3);
        for (int i = 0; i < n; ++i) b.children.push_back(statement(depth - 1));
        return b;
    }

    AstNode statement(int depth) {
        if (depth <= 0) return simple(1);
        switch (pick(0, 8)) {
        case 0: {
            if (chance(0.5)) return node("If", {}, {expr(2), statement(depth - 1)});
            // then-arm is a block so a nested if cannot capture the else
            return node("If", {}, {expr(2), block(depth), statement(depth - 1)});
        }
        case 1: return node("While", {}, {expr(2), statement(depth - 1)});
        case 2: {
            AstNode init = chance(0.3) ? node("Empty") : simple(1);
            AstNode cond = chance(0.2) ? node("Empty") : expr(2);
            AstNode update = chance(0.3) ? node("Empty") : node("ExprStmt", {}, {node("Postfix", "++", {name()})});
            return node("For", {}, {std::move(init), std::move(cond), std::move(update), statement(depth - 1)});
        }
        case 3: return chance(0.8) ? node("Return", {}, {expr(2)}) : node("Return");
        case 4: return node(chance(0.5) ? "Break" : "Continue");
        case 5: return block(depth);
        default: return simple(2);
        }
    }

    AstNode function() {
        AstNode params = node("Params");
        const int n = pick(0, 3);
        for (int i = 0; i < n; ++i) params.children.push_back(node("Param", {}, {node("Type", type()), name()}));
        AstNode f = node("Function", one_of<std::string>({"run", "getValue", "copy_into"}),
                         {node("Type", one_of<std::string>({"void", "int", "String"})), std::move(params), block(3)});
        return f;
    }
};

// Straight-line and single-branch programs with a reaching-definitions
// oracle computed by enumerating every branch path.
struct OracleStmt {
    std::vector<std::string> uses;
    std::vector<std::string> defs;
};

struct OracleItem {
    bool branch = false;
    OracleStmt stmt;                   // simple statement, or branch condition
    std::vector<OracleStmt> then_arm;
    std::vector<OracleStmt> else_arm;
    bool has_else = false;
};

struct OracleProgram {
    std::vector<OracleItem> items;
    std::string source;
};

using Edge = std::tuple<std::size_t, std::size_t>;

class FlowGenerator {
public:
    explicit FlowGenerator(std::uint64_t seed) : rng_(seed) {}

    OracleProgram program() {
        OracleProgram p;
        const int n = pick(1, 8);
        for (int i = 0; i < n; ++i) {
            OracleItem item;
            if (chance(0.3)) {
                item.branch = true;
                item.stmt.uses = vars(pick(1, 2));
                item.then_arm = arm();
                item.has_else = chance(0.5);
                if (item.has_else) item.else_arm = arm();
            } else {
                item.stmt = assignment();
            }
            p.items.push_back(std::move(item));
        }
        for (const auto& item : p.items) {
            if (!item.branch) {
                p.source += render(item.stmt) + " ";
                continue;
            }
            p.source += "if ( " + join(item.stmt.uses, " < ") + " ) { ";
            for (const auto& s : item.then_arm) p.source += render(s) + " ";
            p.source += "} ";
            if (item.has_else) {
                p.source += "else { ";
                for (const auto& s : item.else_arm) p.source += render(s) + " ";
                p.source += "} ";
            }
        }
        return p;
    }

private:
    std::mt19937_64 rng_;
    const std::vector<std::string> names_ = {"a", "b", "c", "d"};

    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

    std::vector<std::string> vars(int n) {
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) out.push_back(names_[static_cast<std::size_t>(pick(0, 3))]);
        return out;
    }

    OracleStmt assignment() {
        OracleStmt s;
        s.uses = vars(pick(0, 2));
        s.defs = vars(1);
        if (chance(0.2)) s.uses.push_back(s.defs[0]); // compound form
        return s;
    }

    std::vector<OracleStmt> arm() {
        std::vector<OracleStmt> out;
        const int n = pick(1, 3);
        for (int i = 0; i < n; ++i) out.push_back(assignment());
        return out;
    }

    static std::string join(const std::vector<std::string>& xs, const std::string& sep) {
        std::string out;
        for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
        return out;
    }

    static std::string render(const OracleStmt& s) {
        const bool compound = !s.uses.empty() && s.uses.back() == s.defs[0];
        std::vector<std::string> rhs(s.uses.begin(), s.uses.end());
        std::string op = "=";
        if (compound) {
            rhs.pop_back();
            op = "+=";
        }
        const std::string value = rhs.empty() ? "1" : join(rhs, " + ");
        return s.defs[0] + " " + op + " " + value + " ;";
    }
};

/// Union over all branch paths of (most recent def on the path, use) pairs.
inline std::set<Edge> oracle_edges(const std::vector<OracleItem>& items) {
    // site numbering in source order
    struct Site {
        std::size_t index;
        const OracleStmt* stmt;
    };
    std::vector<std::vector<std::vector<Site>>> options; // per item: alternative site sequences
    std::size_t next = 0;
    for (const auto& item : items) {
        if (!item.branch) {
            options.push_back({{{next++, &item.stmt}}});
            continue;
        }
        const Site cond{next++, &item.stmt};
        std::vector<Site> then_seq = {cond};
        for (const auto& s : item.then_arm) then_seq.push_back({next++, &s});
        std::vector<Site> else_seq = {cond};
        for (const auto& s : item.else_arm) else_seq.push_back({next++, &s});
        options.push_back({then_seq, else_seq});
    }
    std::set<Edge> edges;
    const std::size_t paths = std::size_t{1} << options.size();
    for (std::size_t mask = 0; mask < paths; ++mask) {
        bool valid = true;
        std::map<std::string, std::size_t> last;
        for (std::size_t i = 0; i < options.size() && valid; ++i) {
            const std::size_t choice = (mask >> i) & 1U;
            if (choice >= options[i].size()) {
                valid = false;
                break;
            }
            for (const auto& site : options[i][choice]) {
                for (const auto& u : site.stmt->uses) {
                    auto it = last.find(u);
                    if (it != last.end()) edges.insert({it->second, site.index});
                }
                for (const auto& d : site.stmt->defs) last[d] = site.index;
            }
        }
    }
    return edges;
}

} // namespace testing_support
