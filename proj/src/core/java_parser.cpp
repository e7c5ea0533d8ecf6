// Recursive-descent parser for Java method/class fragments. It builds a
// concrete-ish tree with node kinds modelled on common Java grammars and
// drops all names and literal values. Ambiguities (declaration vs
// expression, cast vs parenthesized expression, generic call vs
// comparison) are resolved by bounded backtracking.

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "core/syntax.hpp"

namespace clonefuse::syntax {
namespace {

enum class Tok { Ident, Keyword, Number, String, Char, Op, End };

struct Token {
    Tok type;
    std::string_view text;
    std::size_t offset;
};

const std::unordered_set<std::string_view>& keywords() {
    static const std::unordered_set<std::string_view> k = {
        "abstract", "assert",     "boolean",  "break",     "byte",      "case",     "catch",   "char",
        "class",    "const",      "continue", "default",   "do",        "double",   "else",    "enum",
        "extends",  "final",      "finally",  "float",     "for",       "goto",     "if",      "implements",
        "import",   "instanceof", "int",      "interface", "long",      "native",   "new",     "package",
        "private",  "protected",  "public",   "return",    "short",     "static",   "strictfp", "super",
        "switch",   "synchronized", "this",   "throw",     "throws",    "transient", "try",    "void",
        "volatile", "while",      "true",     "false",     "null",
    };
    return k;
}

bool is_ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c == '$' || c >= 0x80; }
bool is_ident_char(unsigned char c) { return is_ident_start(c) || std::isdigit(c); }

struct ParseFailure {
    std::size_t offset;
    std::string message;
};

std::vector<Token> lex(std::string_view s) {
    static constexpr std::array<std::string_view, 20> kMulti = {
        "<<=", "...", "->", "::", "++", "--", "&&", "||", "==", "!=",
        "<=",  "<<",  "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    };
    std::vector<Token> out;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (c == '/' && i + 1 < n && s[i + 1] == '/') {
            while (i < n && s[i] != '\n') ++i;
        } else if (c == '/' && i + 1 < n && s[i + 1] == '*') {
            const auto end = s.find("*/", i + 2);
            if (end == std::string_view::npos) throw ParseFailure{i, "unterminated block comment"};
            i = end + 2;
        } else if (is_ident_start(c)) {
            std::size_t j = i + 1;
            while (j < n && is_ident_char(static_cast<unsigned char>(s[j]))) ++j;
            const auto text = s.substr(i, j - i);
            out.push_back({keywords().count(text) ? Tok::Keyword : Tok::Ident, text, i});
            i = j;
        } else if (std::isdigit(c) || (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
            std::size_t j = i + 1;
            const bool hex = c == '0' && j < n && (s[j] == 'x' || s[j] == 'X');
            while (j < n) {
                const auto d = static_cast<unsigned char>(s[j]);
                if (std::isalnum(d) || d == '_' || d == '.') {
                    ++j;
                } else if ((d == '+' || d == '-') && !hex && (s[j - 1] == 'e' || s[j - 1] == 'E' ||
                                                            s[j - 1] == 'p' || s[j - 1] == 'P')) {
                    ++j;
                } else {
                    break;
                }
            }
            out.push_back({Tok::Number, s.substr(i, j - i), i});
            i = j;
        } else if (c == '"' && s.substr(i, 3) == "\"\"\"") {
            const auto end = s.find("\"\"\"", i + 3);
            if (end == std::string_view::npos) throw ParseFailure{i, "unterminated text block"};
            out.push_back({Tok::String, s.substr(i, end + 3 - i), i});
            i = end + 3;
        } else if (c == '"' || c == '\'') {
            std::size_t j = i + 1;
            while (j < n && s[j] != static_cast<char>(c)) {
                if (s[j] == '\n') throw ParseFailure{i, "unterminated literal"};
                j += s[j] == '\\' ? 2 : 1;
            }
            if (j >= n) throw ParseFailure{i, "unterminated literal"};
            out.push_back({c == '"' ? Tok::String : Tok::Char, s.substr(i, j + 1 - i), i});
            i = j + 1;
        } else {
            // '>' is always emitted alone so that generic closers can be
            // split; shift/compare operators are rebuilt from adjacency.
            std::size_t len = 1;
            if (c != '>') {
                for (auto op : kMulti)
                    if (s.substr(i, op.size()) == op) {
                        len = op.size();
                        break;
                    }
            }
            out.push_back({Tok::Op, s.substr(i, len), i});
            i += len;
        }
    }
    out.push_back({Tok::End, {}, n});
    return out;
}

using Node = TreeBuilder;

bool is_primitive(std::string_view t) {
    return t == "int" || t == "long" || t == "short" || t == "byte" || t == "char" || t == "float" ||
           t == "double" || t == "boolean" || t == "void";
}

std::string primitive_kind(std::string_view t) {
    if (t == "float" || t == "double") return "floating_point_type";
    if (t == "boolean") return "boolean_type";
    if (t == "void") return "void_type";
    return "integral_type";
}

bool is_modifier(std::string_view t) {
    return t == "public" || t == "private" || t == "protected" || t == "static" || t == "final" ||
           t == "abstract" || t == "synchronized" || t == "native" || t == "transient" || t == "volatile" ||
           t == "strictfp" || t == "default";
}

class Grammar {
public:
    explicit Grammar(std::vector<Token> toks) : t_(std::move(toks)) {}

    Node program() {
        Node root("program");
        while (!at_end()) {
            if (is(";")) {
                ++p_;
                continue;
            }
            if (is_kw("package")) {
                root.children.push_back(package_or_import("package_declaration"));
                continue;
            }
            if (is_kw("import")) {
                root.children.push_back(package_or_import("import_declaration"));
                continue;
            }
            if (auto m = attempt([&] { return member_declaration(true); })) {
                root.children.push_back(std::move(*m));
                continue;
            }
            root.children.push_back(block_statement());
        }
        return root;
    }

private:
    std::vector<Token> t_;
    std::size_t p_ = 0;
    int depth_ = 0;
    static constexpr int kMaxDepth = 1500;

    struct DepthGuard {
        Grammar& p;
        explicit DepthGuard(Grammar& parser) : p(parser) {
            if (++p.depth_ > kMaxDepth) throw ParseFailure{p.cur().offset, "nesting too deep"};
        }
        ~DepthGuard() { --p.depth_; }
    };

    const Token& cur() const { return t_[p_]; }
    const Token& peek(std::size_t k = 1) const { return t_[std::min(p_ + k, t_.size() - 1)]; }
    bool at_end() const { return cur().type == Tok::End; }
    bool is(std::string_view op) const { return cur().type == Tok::Op && cur().text == op; }
    bool is_at(std::size_t k, std::string_view op) const { return peek(k).type == Tok::Op && peek(k).text == op; }
    bool is_kw(std::string_view kw) const { return cur().type == Tok::Keyword && cur().text == kw; }
    bool is_ident() const { return cur().type == Tok::Ident; }
    bool adjacent(std::size_t k) const {
        // token p_+k-1 directly followed by p_+k with no gap
        const auto& a = peek(k - 1);
        const auto& b = peek(k);
        return a.offset + a.text.size() == b.offset;
    }

    [[noreturn]] void error(const std::string& what) const {
        std::string near = at_end() ? "end of input" : "'" + std::string(cur().text) + "'";
        throw ParseFailure{cur().offset, what + " near " + near};
    }
    void expect(std::string_view op) {
        if (!is(op)) error("expected '" + std::string(op) + "'");
        ++p_;
    }
    void expect_kw(std::string_view kw) {
        if (!is_kw(kw)) error("expected '" + std::string(kw) + "'");
        ++p_;
    }
    bool accept(std::string_view op) {
        if (!is(op)) return false;
        ++p_;
        return true;
    }
    Node identifier() {
        // Contextual words (var, record, yield, ...) lex as identifiers.
        if (!is_ident()) error("expected identifier");
        ++p_;
        return Node("identifier");
    }

    template <typename F>
    auto attempt(F&& f) -> std::optional<decltype(f())> {
        const std::size_t saved = p_;
        const int saved_depth = depth_;
        try {
            return f();
        } catch (const ParseFailure&) {
            p_ = saved;
            depth_ = saved_depth;
            return std::nullopt;
        }
    }

    Node package_or_import(const char* kind) {
        ++p_;
        Node n(kind);
        if (is_kw("static")) ++p_;
        n.children.push_back(qualified_name());
        if (accept(".")) expect("*");
        expect(";");
        return n;
    }

    Node qualified_name() {
        Node n = identifier();
        while (is(".") && peek().type == Tok::Ident) {
            p_ += 1;
            Node scoped("scoped_identifier");
            scoped.children.push_back(std::move(n));
            scoped.children.push_back(identifier());
            n = std::move(scoped);
        }
        return n;
    }

    // ---- annotations / modifiers --------------------------------------

    void skip_balanced(std::string_view open, std::string_view close) {
        expect(open);
        int level = 1;
        while (level > 0) {
            if (at_end()) error("unbalanced '" + std::string(open) + "'");
            if (is(open)) ++level;
            if (is(close)) --level;
            ++p_;
        }
    }

    Node annotation() {
        expect("@");
        Node n("annotation");
        n.children.push_back(qualified_name());
        if (is("(")) {
            Node args("annotation_argument_list");
            skip_balanced("(", ")");
            n.children.push_back(std::move(args));
        }
        return n;
    }

    std::optional<Node> modifiers() {
        Node n("modifiers");
        while (true) {
            if (is("@") && !(peek().type == Tok::Keyword && peek().text == "interface")) {
                n.children.push_back(annotation());
            } else if (cur().type == Tok::Keyword && is_modifier(cur().text)) {
                // `synchronized (` begins a statement, not a modifier
                if (cur().text == "synchronized" && is_at(1, "(")) break;
                n.children.push_back(Node(std::string(cur().text)));
                ++p_;
            } else {
                break;
            }
        }
        if (n.children.empty()) return std::nullopt;
        return n;
    }

    // ---- types ---------------------------------------------------------

    Node type_arguments() {
        expect("<");
        Node n("type_arguments");
        if (accept(">")) return n;  // diamond
        do {
            if (is("@")) annotation();
            if (accept("?")) {
                Node w("wildcard");
                if (is_kw("extends") || is_kw("super")) {
                    ++p_;
                    w.children.push_back(type());
                }
                n.children.push_back(std::move(w));
            } else {
                n.children.push_back(type());
            }
        } while (accept(","));
        expect(">");
        return n;
    }

    Node type_parameters() {
        expect("<");
        Node n("type_parameters");
        do {
            while (is("@")) annotation();
            Node tp("type_parameter");
            if (!is_ident()) error("expected type parameter");
            ++p_;
            tp.children.push_back(Node("type_identifier"));
            if (is_kw("extends")) {
                ++p_;
                Node bound("type_bound");
                bound.children.push_back(type());
                while (accept("&")) bound.children.push_back(type());
                tp.children.push_back(std::move(bound));
            }
            n.children.push_back(std::move(tp));
        } while (accept(","));
        expect(">");
        return n;
    }

    Node dims_on(Node base) {
        if (!(is("[") && is_at(1, "]"))) return base;
        Node dims("dimensions");
        while (is("[") && is_at(1, "]")) {
            p_ += 2;
            dims.children.push_back(Node("dimension"));
        }
        Node arr("array_type");
        arr.children.push_back(std::move(base));
        arr.children.push_back(std::move(dims));
        return arr;
    }

    Node class_type() {
        if (!is_ident()) error("expected type");
        ++p_;
        Node n("type_identifier");
        if (is("<")) {
            Node g("generic_type");
            g.children.push_back(std::move(n));
            g.children.push_back(type_arguments());
            n = std::move(g);
        }
        while (is(".") && (peek().type == Tok::Ident || is_at(1, "@"))) {
            ++p_;
            while (is("@")) annotation();
            if (!is_ident()) error("expected type");
            ++p_;
            Node scoped("scoped_type_identifier");
            scoped.children.push_back(std::move(n));
            scoped.children.push_back(Node("type_identifier"));
            n = std::move(scoped);
            if (is("<")) {
                Node g("generic_type");
                g.children.push_back(std::move(n));
                g.children.push_back(type_arguments());
                n = std::move(g);
            }
        }
        return n;
    }

    Node type_no_dims() {
        while (is("@")) annotation();
        if (cur().type == Tok::Keyword && is_primitive(cur().text)) {
            Node n(primitive_kind(cur().text));
            ++p_;
            return n;
        }
        return class_type();
    }

    Node type() { return dims_on(type_no_dims()); }

    // ---- declarations --------------------------------------------------

    Node member_declaration(bool top_level) {
        DepthGuard g(*this);
        auto mods = modifiers();
        auto with_mods = [&](Node n) {
            if (mods) n.children.insert(n.children.begin(), std::move(*mods));
            return n;
        };
        if (is_kw("class")) return with_mods(class_declaration());
        if (is_kw("interface")) return with_mods(interface_declaration());
        if (is_kw("enum")) return with_mods(enum_declaration());
        if (is("@") && peek().type == Tok::Keyword && peek().text == "interface") {
            p_ += 2;
            Node n("annotation_type_declaration");
            n.children.push_back(identifier());
            n.children.push_back(class_body());
            return with_mods(std::move(n));
        }
        if (is_ident() && cur().text == "record" && peek().type == Tok::Ident && is_at(2, "(")) {
            ++p_;
            Node n("record_declaration");
            n.children.push_back(identifier());
            n.children.push_back(formal_parameters());
            if (is_kw("implements")) n.children.push_back(super_interfaces("super_interfaces"));
            n.children.push_back(class_body());
            return with_mods(std::move(n));
        }
        if (is("{") && !top_level) {
            Node n(mods ? "static_initializer" : "initializer");
            n.children.push_back(block());
            return n;
        }
        std::optional<Node> tparams;
        if (is("<")) tparams = type_parameters();

        // constructor: Name '('
        if (is_ident() && is_at(1, "(")) {
            ++p_;
            Node n("constructor_declaration");
            if (tparams) n.children.push_back(std::move(*tparams));
            n.children.push_back(Node("identifier"));
            n.children.push_back(formal_parameters());
            if (is_kw("throws")) n.children.push_back(throws_clause());
            n.children.push_back(block());
            return with_mods(std::move(n));
        }
        // compact record constructor: Name '{'
        if (!top_level && mods && is_ident() && is_at(1, "{")) {
            ++p_;
            Node n("compact_constructor_declaration");
            n.children.push_back(Node("identifier"));
            n.children.push_back(block());
            return with_mods(std::move(n));
        }
        Node ty = type();
        if (!is_ident()) error("expected declarator name");
        if (is_at(1, "(")) {
            ++p_;
            Node n("method_declaration");
            if (tparams) n.children.push_back(std::move(*tparams));
            n.children.push_back(std::move(ty));
            n.children.push_back(Node("identifier"));
            n.children.push_back(formal_parameters());
            while (is("[") && is_at(1, "]")) p_ += 2;
            if (is_kw("throws")) n.children.push_back(throws_clause());
            if (is("{")) {
                n.children.push_back(block());
            } else if (is_kw("default")) {
                ++p_;
                element_value();
                expect(";");
            } else {
                expect(";");
            }
            return with_mods(std::move(n));
        }
        if (tparams) error("type parameters on a field");
        Node n("field_declaration");
        n.children.push_back(std::move(ty));
        variable_declarators(n);
        expect(";");
        return with_mods(std::move(n));
    }

    void element_value() {
        if (is("{")) {
            skip_balanced("{", "}");
        } else if (is("@")) {
            annotation();
        } else {
            expression();
        }
    }

    Node throws_clause() {
        expect_kw("throws");
        Node n("throws");
        n.children.push_back(class_type());
        while (accept(",")) n.children.push_back(class_type());
        return n;
    }

    Node super_interfaces(const char* kind) {
        ++p_;
        Node n(kind);
        Node list("type_list");
        list.children.push_back(class_type());
        while (accept(",")) list.children.push_back(class_type());
        n.children.push_back(std::move(list));
        return n;
    }

    Node class_declaration() {
        expect_kw("class");
        Node n("class_declaration");
        n.children.push_back(identifier());
        if (is("<")) n.children.push_back(type_parameters());
        if (is_kw("extends")) {
            ++p_;
            Node sc("superclass");
            sc.children.push_back(class_type());
            n.children.push_back(std::move(sc));
        }
        if (is_kw("implements")) n.children.push_back(super_interfaces("super_interfaces"));
        if (is_ident() && cur().text == "permits") n.children.push_back(super_interfaces("permits"));
        n.children.push_back(class_body());
        return n;
    }

    Node interface_declaration() {
        expect_kw("interface");
        Node n("interface_declaration");
        n.children.push_back(identifier());
        if (is("<")) n.children.push_back(type_parameters());
        if (is_kw("extends")) n.children.push_back(super_interfaces("extends_interfaces"));
        if (is_ident() && cur().text == "permits") n.children.push_back(super_interfaces("permits"));
        n.children.push_back(class_body());
        return n;
    }

    Node enum_declaration() {
        expect_kw("enum");
        Node n("enum_declaration");
        n.children.push_back(identifier());
        if (is_kw("implements")) n.children.push_back(super_interfaces("super_interfaces"));
        expect("{");
        Node body("enum_body");
        while (!is(";") && !is("}")) {
            while (is("@")) annotation();
            Node c("enum_constant");
            c.children.push_back(identifier());
            if (is("(")) c.children.push_back(argument_list());
            if (is("{")) c.children.push_back(class_body());
            body.children.push_back(std::move(c));
            if (!accept(",")) break;
        }
        if (accept(";")) {
            while (!is("}")) {
                if (at_end()) error("unterminated enum body");
                if (accept(";")) continue;
                body.children.push_back(member_declaration(false));
            }
        }
        expect("}");
        n.children.push_back(std::move(body));
        return n;
    }

    Node class_body() {
        expect("{");
        Node n("class_body");
        while (!is("}")) {
            if (at_end()) error("unterminated class body");
            if (accept(";")) continue;
            n.children.push_back(member_declaration(false));
        }
        expect("}");
        return n;
    }

    Node formal_parameters() {
        expect("(");
        Node n("formal_parameters");
        if (!is(")")) {
            do {
                Node fp("formal_parameter");
                if (auto m = modifiers()) fp.children.push_back(std::move(*m));
                fp.children.push_back(type());
                if (accept("...")) fp.kind = "spread_parameter";
                if (is_kw("this")) {
                    ++p_;
                    fp.children.push_back(Node("this"));
                } else {
                    fp.children.push_back(identifier());
                }
                while (is("[") && is_at(1, "]")) p_ += 2;
                n.children.push_back(std::move(fp));
            } while (accept(","));
        }
        expect(")");
        return n;
    }

    void variable_declarators(Node& into) {
        do {
            Node d("variable_declarator");
            d.children.push_back(identifier());
            while (is("[") && is_at(1, "]")) {
                p_ += 2;
                d.children.push_back(Node("dimensions"));
            }
            if (accept("=")) d.children.push_back(variable_initializer());
            into.children.push_back(std::move(d));
        } while (accept(","));
    }

    Node variable_initializer() { return is("{") ? array_initializer() : expression(); }

    Node array_initializer() {
        expect("{");
        Node n("array_initializer");
        while (!is("}")) {
            n.children.push_back(variable_initializer());
            if (!accept(",")) break;
        }
        expect("}");
        return n;
    }

    // local variable declaration without the trailing ';'
    Node local_variable_declaration() {
        Node n("local_variable_declaration");
        if (auto m = modifiers()) n.children.push_back(std::move(*m));
        Node ty = type();
        if (!is_ident()) error("expected variable name");
        // `a < b` style expressions parse as a type only when followed by
        // a declarator, so require one of = ; , [ : after the name.
        if (!(is_at(1, "=") || is_at(1, ";") || is_at(1, ",") || is_at(1, "[") || is_at(1, ":") ||
              is_at(1, ")")))
            error("not a declaration");
        n.children.push_back(std::move(ty));
        variable_declarators(n);
        return n;
    }

    // ---- statements ----------------------------------------------------

    Node block() {
        DepthGuard g(*this);
        expect("{");
        Node n("block");
        while (!is("}")) {
            if (at_end()) error("unterminated block");
            n.children.push_back(block_statement());
        }
        expect("}");
        return n;
    }

    Node block_statement() {
        DepthGuard g(*this);
        if (is_kw("class") || is_kw("interface") || is_kw("enum") ||
            ((is_kw("final") || is_kw("abstract") || is_kw("static")) &&
             (peek().text == "class" || peek().text == "interface")))
            return member_declaration(false);
        if (starts_declaration()) {
            if (auto d = attempt([&] {
                    Node n = local_variable_declaration();
                    expect(";");
                    return n;
                }))
                return std::move(*d);
        }
        return statement();
    }

    bool starts_declaration() const {
        if (cur().type == Tok::Ident) return true;
        if (cur().type == Tok::Keyword && (is_primitive(cur().text) || is_modifier(cur().text))) return true;
        return is("@");
    }

    Node paren_expression() {
        expect("(");
        Node n("parenthesized_expression");
        n.children.push_back(expression());
        expect(")");
        return n;
    }

    Node statement() {
        DepthGuard g(*this);
        if (is("{")) return block();
        if (accept(";")) return Node("empty_statement");
        if (cur().type == Tok::Keyword) {
            const auto kw = cur().text;
            if (kw == "if") {
                ++p_;
                Node n("if_statement");
                n.children.push_back(paren_expression());
                n.children.push_back(statement());
                if (is_kw("else")) {
                    ++p_;
                    n.children.push_back(statement());
                }
                return n;
            }
            if (kw == "while") {
                ++p_;
                Node n("while_statement");
                n.children.push_back(paren_expression());
                n.children.push_back(statement());
                return n;
            }
            if (kw == "do") {
                ++p_;
                Node n("do_statement");
                n.children.push_back(statement());
                expect_kw("while");
                n.children.push_back(paren_expression());
                expect(";");
                return n;
            }
            if (kw == "for") return for_statement();
            if (kw == "try") return try_statement();
            if (kw == "switch") {
                ++p_;
                Node n("switch_statement");
                n.children.push_back(paren_expression());
                n.children.push_back(switch_block());
                return n;
            }
            if (kw == "return") {
                ++p_;
                Node n("return_statement");
                if (!is(";")) n.children.push_back(expression());
                expect(";");
                return n;
            }
            if (kw == "break" || kw == "continue") {
                ++p_;
                Node n(kw == "break" ? "break_statement" : "continue_statement");
                if (is_ident()) n.children.push_back(identifier());
                expect(";");
                return n;
            }
            if (kw == "throw") {
                ++p_;
                Node n("throw_statement");
                n.children.push_back(expression());
                expect(";");
                return n;
            }
            if (kw == "synchronized") {
                ++p_;
                Node n("synchronized_statement");
                n.children.push_back(paren_expression());
                n.children.push_back(block());
                return n;
            }
            if (kw == "assert") {
                ++p_;
                Node n("assert_statement");
                n.children.push_back(expression());
                if (accept(":")) n.children.push_back(expression());
                expect(";");
                return n;
            }
            if (kw == "else" || kw == "case" || kw == "catch" || kw == "finally") error("unexpected keyword");
        }
        if (is_ident() && cur().text == "yield" && !is_at(1, "=") && !is_at(1, "(") && !is_at(1, ".")) {
            ++p_;
            Node n("yield_statement");
            n.children.push_back(expression());
            expect(";");
            return n;
        }
        if (is_ident() && is_at(1, ":") ) {
            ++p_;
            ++p_;
            Node n("labeled_statement");
            n.children.push_back(Node("identifier"));
            n.children.push_back(statement());
            return n;
        }
        Node n("expression_statement");
        n.children.push_back(expression());
        expect(";");
        return n;
    }

    Node for_statement() {
        expect_kw("for");
        expect("(");
        if (auto enhanced = attempt([&] {
                Node n("enhanced_for_statement");
                if (auto m = modifiers()) n.children.push_back(std::move(*m));
                n.children.push_back(type());
                n.children.push_back(identifier());
                expect(":");
                return n;
            })) {
            Node n = std::move(*enhanced);
            n.children.push_back(expression());
            expect(")");
            n.children.push_back(statement());
            return n;
        }
        Node n("for_statement");
        if (!is(";")) {
            if (auto d = attempt([&] {
                    Node decl = local_variable_declaration();
                    if (!is(";")) error("expected ';'");
                    return decl;
                })) {
                n.children.push_back(std::move(*d));
            } else {
                n.children.push_back(expression());
                while (accept(",")) n.children.push_back(expression());
            }
        }
        expect(";");
        if (!is(";")) n.children.push_back(expression());
        expect(";");
        if (!is(")")) {
            n.children.push_back(expression());
            while (accept(",")) n.children.push_back(expression());
        }
        expect(")");
        n.children.push_back(statement());
        return n;
    }

    Node try_statement() {
        expect_kw("try");
        Node n("try_statement");
        if (is("(")) {
            n.kind = "try_with_resources_statement";
            ++p_;
            Node res("resource_specification");
            while (!is(")")) {
                Node r("resource");
                if (auto d = attempt([&] {
                        Node x("local_variable_declaration");
                        if (auto m = modifiers()) x.children.push_back(std::move(*m));
                        x.children.push_back(type());
                        x.children.push_back(identifier());
                        expect("=");
                        x.children.push_back(expression());
                        return x;
                    })) {
                    r.children.push_back(std::move(*d));
                } else {
                    r.children.push_back(expression());
                }
                res.children.push_back(std::move(r));
                if (!accept(";")) break;
            }
            expect(")");
            n.children.push_back(std::move(res));
        }
        n.children.push_back(block());
        bool handlers = false;
        while (is_kw("catch")) {
            ++p_;
            handlers = true;
            Node c("catch_clause");
            expect("(");
            Node param("catch_formal_parameter");
            if (auto m = modifiers()) param.children.push_back(std::move(*m));
            Node types("catch_type");
            types.children.push_back(class_type());
            while (accept("|")) types.children.push_back(class_type());
            param.children.push_back(std::move(types));
            param.children.push_back(identifier());
            expect(")");
            c.children.push_back(std::move(param));
            c.children.push_back(block());
            n.children.push_back(std::move(c));
        }
        if (is_kw("finally")) {
            ++p_;
            handlers = true;
            Node f("finally_clause");
            f.children.push_back(block());
            n.children.push_back(std::move(f));
        }
        if (!handlers && n.kind == "try_statement") error("try without catch or finally");
        return n;
    }

    Node switch_label() {
        Node label("switch_label");
        if (is_kw("default")) {
            ++p_;
            return label;
        }
        expect_kw("case");
        do {
            label.children.push_back(ternary());
        } while (accept(","));
        return label;
    }

    Node switch_block() {
        expect("{");
        Node n("switch_block");
        while (!is("}")) {
            if (at_end()) error("unterminated switch block");
            Node label = switch_label();
            if (accept("->")) {
                Node rule("switch_rule");
                rule.children.push_back(std::move(label));
                if (is("{")) {
                    rule.children.push_back(block());
                } else if (is_kw("throw")) {
                    rule.children.push_back(statement());
                } else {
                    Node es("expression_statement");
                    es.children.push_back(expression());
                    expect(";");
                    rule.children.push_back(std::move(es));
                }
                n.children.push_back(std::move(rule));
                continue;
            }
            expect(":");
            Node group("switch_block_statement_group");
            group.children.push_back(std::move(label));
            while (is_kw("case") || is_kw("default")) {
                // `default ->` cannot follow a colon label; stacked labels only
                group.children.push_back(switch_label());
                expect(":");
            }
            while (!is("}") && !is_kw("case") && !is_kw("default")) {
                if (at_end()) error("unterminated switch block");
                group.children.push_back(block_statement());
            }
            n.children.push_back(std::move(group));
        }
        expect("}");
        return n;
    }

    // ---- expressions ---------------------------------------------------

    bool lambda_ahead() const {
        if (is_ident() && is_at(1, "->")) return true;
        if (!is("(")) return false;
        int level = 0;
        for (std::size_t k = 0; p_ + k < t_.size(); ++k) {
            const auto& tk = peek(k);
            if (tk.type == Tok::End) return false;
            if (tk.type == Tok::Op && tk.text == "(") ++level;
            if (tk.type == Tok::Op && tk.text == ")" && --level == 0)
                return peek(k + 1).type == Tok::Op && peek(k + 1).text == "->";
        }
        return false;
    }

    Node lambda() {
        Node n("lambda_expression");
        if (is_ident()) {
            ++p_;
            n.children.push_back(Node("identifier"));
        } else if (auto typed = attempt([&] { return formal_parameters(); })) {
            n.children.push_back(std::move(*typed));
        } else {
            expect("(");
            Node params("inferred_parameters");
            if (!is(")")) {
                params.children.push_back(identifier());
                while (accept(",")) params.children.push_back(identifier());
            }
            expect(")");
            n.children.push_back(std::move(params));
        }
        expect("->");
        n.children.push_back(is("{") ? block() : expression());
        return n;
    }

    // Matches an assignment operator at the cursor; returns token count.
    std::size_t assignment_op() const {
        if (cur().type != Tok::Op) return 0;
        const auto x = cur().text;
        if (x == "=" || x == "+=" || x == "-=" || x == "*=" || x == "/=" || x == "%=" || x == "&=" || x == "|=" ||
            x == "^=" || x == "<<=")
            return 1;
        if (x == ">" && is_at(1, ">") && adjacent(1)) {
            if (is_at(2, "=") && adjacent(2)) return 3;                                    // >>=
            if (is_at(2, ">") && adjacent(2) && is_at(3, "=") && adjacent(3)) return 4;    // >>>=
        }
        return 0;
    }

    Node expression() {
        DepthGuard g(*this);
        if (lambda_ahead()) return lambda();
        Node lhs = ternary();
        if (const auto n = assignment_op()) {
            p_ += n;
            Node a("assignment");
            a.children.push_back(std::move(lhs));
            a.children.push_back(expression());
            return a;
        }
        return lhs;
    }

    Node ternary() {
        Node cond = binary(1);
        if (!accept("?")) return cond;
        Node n("ternary_expression");
        n.children.push_back(std::move(cond));
        n.children.push_back(expression());
        expect(":");
        n.children.push_back(lambda_ahead() ? lambda() : ternary());
        return n;
    }

    // Binary operator at the cursor: precedence (0 = none) and token count.
    std::pair<int, std::size_t> binary_op() const {
        if (cur().type == Tok::Keyword && cur().text == "instanceof") return {7, 1};
        if (cur().type != Tok::Op) return {0, 0};
        const auto x = cur().text;
        if (x == "||") return {1, 1};
        if (x == "&&") return {2, 1};
        if (x == "|") return {3, 1};
        if (x == "^") return {4, 1};
        if (x == "&") return {5, 1};
        if (x == "==" || x == "!=") return {6, 1};
        if (x == "<" || x == "<=") return {7, 1};
        if (x == "<<") return {8, 1};
        if (x == ">") {
            if (is_at(1, ">") && adjacent(1)) {
                if (is_at(2, ">") && adjacent(2)) {
                    if (is_at(3, "=") && adjacent(3)) return {0, 0};
                    return {8, 3};
                }
                if (is_at(2, "=") && adjacent(2)) return {0, 0};
                return {8, 2};
            }
            if (is_at(1, "=") && adjacent(1)) return {7, 2};
            return {7, 1};
        }
        if (x == "+" || x == "-") return {9, 1};
        if (x == "*" || x == "/" || x == "%") return {10, 1};
        return {0, 0};
    }

    Node binary(int min_prec) {
        DepthGuard g(*this);
        Node lhs = unary();
        while (true) {
            const auto [prec, count] = binary_op();
            if (prec == 0 || prec < min_prec) break;
            const bool is_instanceof = cur().type == Tok::Keyword;
            p_ += count;
            if (is_instanceof) {
                Node n("instanceof_expression");
                n.children.push_back(std::move(lhs));
                if (is_kw("final")) ++p_;
                n.children.push_back(type());
                if (is_ident()) n.children.push_back(identifier());  // pattern binding
                lhs = std::move(n);
                continue;
            }
            Node rhs = binary(prec + 1);
            Node n("binary_expression");
            n.children.push_back(std::move(lhs));
            n.children.push_back(std::move(rhs));
            lhs = std::move(n);
        }
        return lhs;
    }

    bool cast_operand_follows() const {
        const auto& tk = cur();
        switch (tk.type) {
            case Tok::Ident:
            case Tok::Number:
            case Tok::String:
            case Tok::Char:
                return true;
            case Tok::Keyword:
                return tk.text == "this" || tk.text == "super" || tk.text == "new" || tk.text == "true" ||
                       tk.text == "false" || tk.text == "null" || tk.text == "switch" || is_primitive(tk.text);
            case Tok::Op:
                return tk.text == "(" || tk.text == "!" || tk.text == "~";
            case Tok::End:
                return false;
        }
        return false;
    }

    Node unary() {
        DepthGuard g(*this);
        if (cur().type == Tok::Op) {
            const auto x = cur().text;
            if (x == "+" || x == "-" || x == "!" || x == "~") {
                ++p_;
                Node n("unary_expression");
                n.children.push_back(unary());
                return n;
            }
            if (x == "++" || x == "--") {
                ++p_;
                Node n("update_expression");
                n.children.push_back(unary());
                return n;
            }
            if (x == "(" && !lambda_ahead()) {
                if (peek().type == Tok::Keyword && is_primitive(peek().text)) {
                    if (auto c = attempt([&] {
                            ++p_;
                            Node n("cast_expression");
                            n.children.push_back(type());
                            expect(")");
                            n.children.push_back(unary());
                            return n;
                        }))
                        return std::move(*c);
                } else if (auto c = attempt([&] {
                               ++p_;
                               Node n("cast_expression");
                               n.children.push_back(type());
                               while (accept("&")) n.children.push_back(type());
                               expect(")");
                               if (!cast_operand_follows()) error("not a cast");
                               n.children.push_back(lambda_ahead() ? lambda() : unary());
                               return n;
                           })) {
                    return std::move(*c);
                }
            }
        }
        return postfix(primary());
    }

    Node argument_list() {
        expect("(");
        Node n("argument_list");
        if (!is(")")) {
            do {
                n.children.push_back(expression());
            } while (accept(","));
        }
        expect(")");
        return n;
    }

    Node creation() {
        expect_kw("new");
        if (is("<")) type_arguments();
        Node ty = type_no_dims();
        if (is("[")) {
            Node n("array_creation_expression");
            n.children.push_back(std::move(ty));
            bool sized = false;
            while (is("[")) {
                ++p_;
                if (accept("]")) {
                    n.children.push_back(Node("dimension"));
                } else {
                    Node d("dimensions_expr");
                    d.children.push_back(expression());
                    expect("]");
                    n.children.push_back(std::move(d));
                    sized = true;
                }
            }
            if (is("{")) {
                n.children.push_back(array_initializer());
            } else if (!sized) {
                error("array creation needs a size or initializer");
            }
            return n;
        }
        Node n("object_creation_expression");
        n.children.push_back(std::move(ty));
        n.children.push_back(argument_list());
        if (is("{")) n.children.push_back(class_body());
        return n;
    }

    Node primary() {
        DepthGuard g(*this);
        const auto& tk = cur();
        switch (tk.type) {
            case Tok::Number:
                ++p_;
                return Node("number_literal");
            case Tok::String:
                ++p_;
                return Node("string_literal");
            case Tok::Char:
                ++p_;
                return Node("character_literal");
            case Tok::Ident: {
                if (is_at(1, "(")) {
                    ++p_;
                    Node n("method_invocation");
                    n.children.push_back(Node("identifier"));
                    n.children.push_back(argument_list());
                    return n;
                }
                ++p_;
                Node id("identifier");
                if (is("[") && is_at(1, "]")) return class_literal_or_ref(dims_on(Node("type_identifier")));
                return id;
            }
            case Tok::Keyword: {
                const auto kw = tk.text;
                if (kw == "true" || kw == "false") {
                    ++p_;
                    return Node(std::string(kw));
                }
                if (kw == "null") {
                    ++p_;
                    return Node("null_literal");
                }
                if (kw == "this" || kw == "super") {
                    ++p_;
                    if (is("(")) {
                        Node n(kw == "this" ? "explicit_this_invocation" : "explicit_super_invocation");
                        n.children.push_back(argument_list());
                        return n;
                    }
                    return Node(std::string(kw));
                }
                if (kw == "new") return creation();
                if (kw == "switch") {
                    ++p_;
                    Node n("switch_expression");
                    n.children.push_back(paren_expression());
                    n.children.push_back(switch_block());
                    return n;
                }
                if (is_primitive(kw)) return class_literal_or_ref(type());
                break;
            }
            case Tok::Op:
                if (tk.text == "(") return paren_expression();
                if (tk.text == "{") return array_initializer();
                if (tk.text == "@") {
                    annotation();
                    return primary();
                }
                break;
            case Tok::End:
                break;
        }
        error("expected expression");
    }

    Node class_literal_or_ref(Node ty) {
        if (is(".") && peek().type == Tok::Keyword && peek().text == "class") {
            p_ += 2;
            Node n("class_literal");
            n.children.push_back(std::move(ty));
            return n;
        }
        if (is("::")) return method_reference(std::move(ty));
        error("expected '.class' or '::'");
    }

    Node method_reference(Node target) {
        expect("::");
        if (is("<")) type_arguments();
        Node n("method_reference");
        n.children.push_back(std::move(target));
        if (is_kw("new")) {
            ++p_;
            n.children.push_back(Node("new"));
        } else {
            n.children.push_back(identifier());
        }
        return n;
    }

    Node postfix(Node base) {
        while (true) {
            if (is(".")) {
                ++p_;
                if (is("<")) {
                    type_arguments();
                    if (!is_ident()) error("expected method name");
                    ++p_;
                    Node n("method_invocation");
                    n.children.push_back(std::move(base));
                    n.children.push_back(Node("identifier"));
                    n.children.push_back(argument_list());
                    base = std::move(n);
                } else if (is_ident()) {
                    ++p_;
                    if (is("(")) {
                        Node n("method_invocation");
                        n.children.push_back(std::move(base));
                        n.children.push_back(Node("identifier"));
                        n.children.push_back(argument_list());
                        base = std::move(n);
                    } else {
                        Node n("field_access");
                        n.children.push_back(std::move(base));
                        n.children.push_back(Node("identifier"));
                        base = std::move(n);
                    }
                } else if (is_kw("new")) {
                    Node inner = creation();
                    inner.children.insert(inner.children.begin(), std::move(base));
                    base = std::move(inner);
                } else if (is_kw("class")) {
                    ++p_;
                    Node n("class_literal");
                    n.children.push_back(std::move(base));
                    base = std::move(n);
                } else if (is_kw("this") || is_kw("super")) {
                    Node n("field_access");
                    n.children.push_back(std::move(base));
                    n.children.push_back(Node(std::string(cur().text)));
                    ++p_;
                    base = std::move(n);
                } else {
                    error("expected member name");
                }
            } else if (is("[")) {
                if (is_at(1, "]")) return class_literal_or_ref(dims_on(std::move(base)));
                ++p_;
                Node n("array_access");
                n.children.push_back(std::move(base));
                n.children.push_back(expression());
                expect("]");
                base = std::move(n);
            } else if (is("++") || is("--")) {
                ++p_;
                Node n("update_expression");
                n.children.push_back(std::move(base));
                base = std::move(n);
            } else if (is("::")) {
                base = method_reference(std::move(base));
            } else if (is("<") && base.kind == "identifier") {
                // Generic type followed by :: (e.g. List<String>::new)
                auto ref = attempt([&] {
                    Node g("generic_type");
                    g.children.push_back(Node("type_identifier"));
                    g.children.push_back(type_arguments());
                    if (!is("::")) error("not a generic method reference");
                    return method_reference(std::move(g));
                });
                if (!ref) return base;
                base = std::move(*ref);
            } else {
                return base;
            }
        }
    }
};

}  // namespace

SyntaxTree JavaParser::parse(std::string_view source, std::string_view fragment_id) const {
    auto describe = [&](std::size_t offset, const std::string& msg) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i < offset && i < source.size(); ++i) {
            if (source[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string where = fragment_id.empty() ? std::string("<source>") : std::string(fragment_id);
        return where + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg;
    };
    try {
        Grammar p(lex(source));
        return p.program().build();
    } catch (const ParseFailure& f) {
        fail(ErrorCode::Parse, describe(f.offset, f.message));
    }
}

}  // namespace clonefuse::syntax
