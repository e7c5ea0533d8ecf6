#include <doctest.h>

#include <random>
#include <unordered_map>

#include "core/syntax.hpp"
#include "oracles.hpp"

using namespace clonefuse;
using namespace clonefuse::syntax;

namespace {
using TB = TreeBuilder;

std::set<std::string> kinds_of(const SyntaxTree& t) {
    std::set<std::string> out;
    for (const auto& n : t.nodes) out.insert(n.kind);
    return out;
}

// Straight chain of `depth` nodes.
TB chain(std::size_t depth) {
    TB t("x");
    for (std::size_t i = 1; i < depth; ++i) t = TB("x", {t});
    return t;
}
}  // namespace

TEST_CASE("parse erases names and keeps node kinds") {
    JavaParser p;
    const auto t = p.parse("if (x) y = 1;");
    CHECK(t.well_formed());
    const auto k = kinds_of(t);
    for (const char* want : {"if_statement", "identifier", "assignment", "number_literal"}) CHECK(k.count(want) == 1);
    for (const auto& kind : k) {
        CHECK(kind != "x");
        CHECK(kind != "y");
    }

    const auto empty = p.parse("");
    CHECK(empty.size() == 1);
    CHECK(empty.node(empty.root).kind == "program");
}

TEST_CASE("renaming identifiers does not change the tree") {
    JavaParser p;
    const auto a = p.parse("int sum(int[] v) { int t = 0; for (int i = 0; i < v.length; i++) t += v[i]; return t; }");
    const auto b = p.parse("int add(int[] w) { int s = 0; for (int j = 0; j < w.length; j++) s += w[j]; return s; }");
    CHECK(tree_edit_distance(a, b) == 0);
    const auto v = structural_vector(a, b);
    CHECK(v.subtree_jaccard() == 1.0);
}

TEST_CASE("broken source is a parse error naming the fragment") {
    JavaParser p;
    try {
        p.parse("int f( { return ; ", "frag-17");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Parse);
        CHECK(std::string(e.what()).find("frag-17") != std::string::npos);
    }
    CHECK_THROWS_AS(make_parser("cobol"), Error);
}

TEST_CASE("parser handles a realistic method") {
    JavaParser p;
    const char* src = R"(
        public static List<String> readLines(String path) throws IOException {
            List<String> result = new ArrayList<>();
            try (BufferedReader r = new BufferedReader(new FileReader(path))) {
                String row;
                while ((row = r.readLine()) != null) { result.add(row.trim()); }
            } catch (IOException | RuntimeException e) {
                throw e;
            }
            int n = result.isEmpty() ? 0 : result.size() >>> 1;
            switch (n) { case 0: return result; default: break; }
            return result.stream().map(s -> s + "!").collect(Collectors.toList());
        })";
    const auto t = p.parse(src);
    CHECK(t.well_formed());
    const auto k = kinds_of(t);
    CHECK(k.count("while_statement") == 1);
    CHECK(k.count("catch_clause") == 1);
    CHECK(k.count("ternary_expression") == 1);
}

TEST_CASE("TED small cases") {
    const auto ab_c = TB("A", {TB("B"), TB("C")}).build();
    const auto ab = TB("A", {TB("B")}).build();
    CHECK(tree_edit_distance(ab_c, ab) == 1);
    CHECK(tree_edit_distance(ab_c, ab_c) == 0);
    CHECK(tree_edit_distance(TB("X").build(), TB("Y").build()) == 1);
    CHECK(oracle::ted_exhaustive(ab_c, ab) == 1);
}

TEST_CASE("TED matches the exhaustive mapping oracle and is a metric") {
    std::mt19937_64 g(77);
    std::vector<SyntaxTree> trees;
    std::uniform_int_distribution<std::size_t> size(1, 8);
    for (int i = 0; i < 200; ++i) trees.push_back(oracle::random_tree(g, size(g), 3));
    for (std::size_t i = 0; i < trees.size(); ++i) {
        const auto& a = trees[i];
        const auto& b = trees[(i * 7 + 3) % trees.size()];
        const auto& c = trees[(i * 13 + 5) % trees.size()];
        const auto ab = tree_edit_distance(a, b);
        CHECK(ab == oracle::ted_exhaustive(a, b));
        CHECK(ab == tree_edit_distance(b, a));
        CHECK(tree_edit_distance(a, a) == 0);
        if (ab == 0) CHECK(oracle::canonical(a, a.root) == oracle::canonical(b, b.root));
        CHECK(tree_edit_distance(a, c) <= ab + tree_edit_distance(b, c));
    }
}

TEST_CASE("fingerprints: equal subtrees hash equal, no collisions on distinct trees") {
    const auto t = TB("R", {TB("A", {TB("x")}), TB("A", {TB("x")})}).build();
    const auto fp = node_fingerprints(t);
    CHECK(fp[t.node(t.root).children[0]] == fp[t.node(t.root).children[1]]);
    CHECK(subtree_fingerprints(t).size() == 3);
    CHECK(subtree_fingerprints(TB("k").build()) == subtree_fingerprints(TB("k").build()));
    CHECK(fingerprint_jaccard(subtree_fingerprints(t), subtree_fingerprints(t)) == 1.0);

    std::mt19937_64 g(5);
    std::uniform_int_distribution<std::size_t> size(1, 10);
    std::unordered_map<std::string, std::uint64_t> seen;
    std::unordered_map<std::uint64_t, std::string> by_hash;
    std::size_t distinct = 0;
    while (distinct < 10000) {
        const auto tree = oracle::random_tree(g, size(g), 4);
        const auto key = oracle::canonical(tree, tree.root);
        const auto h = node_fingerprints(tree)[tree.root];
        if (auto it = seen.find(key); it != seen.end()) {
            REQUIRE(it->second == h);
            continue;
        }
        seen[key] = h;
        REQUIRE_MESSAGE(by_hash.emplace(h, key).second, "collision: " << key << " vs " << by_hash[h]);
        ++distinct;
    }
}

TEST_CASE("shape statistics") {
    const auto single = shape_statistics(TB("x").build());
    CHECK(single.max_depth == 1);
    CHECK(single.width == 1);
    CHECK(single.leaf_count == 1);
    CHECK(single.logical_density == 0.0);

    const auto star = shape_statistics(TB("r", {TB("a"), TB("b"), TB("c")}).build());
    CHECK(star.max_depth == 2);
    CHECK(star.width == 3);
    CHECK(star.leaf_count == 3);

    // 10 nodes, 2 of them if_statement
    const auto ten = TB("block", {TB("if_statement", {TB("identifier"), TB("expression_statement")}),
                                  TB("if_statement", {TB("identifier")}), TB("a"), TB("b"), TB("c"), TB("d")})
                         .build();
    REQUIRE(ten.size() == 10);
    CHECK(shape_statistics(ten).logical_density == doctest::Approx(0.2));
}

TEST_CASE("structural vector") {
    const auto a = TB("r", {TB("a"), TB("if_statement", {TB("b")})}).build();
    const auto same = structural_vector(a, a);
    CHECK(same.v == std::array<double, 6>{0, 0, 0, 0, 1, 1});

    const auto d4 = chain(4).build(), d8 = chain(8).build();
    const auto v = structural_vector(d4, d8);
    CHECK(v.d_max_depth() == doctest::Approx(0.5));
    CHECK(v.d_node_count() == doctest::Approx(0.5));
    CHECK(v.ted_norm() == doctest::Approx(4.0 / 12.0));
    CHECK(v.leaf_ratio() == 1.0);
    CHECK(structural_vector(d8, d4).v == v.v);

    const auto fallback = StructuralVector::parse_failure();
    CHECK(fallback.parse_failed);
    CHECK(fallback.v == std::array<double, 6>{});

    // above the node cap the TED term becomes 1 - subtree jaccard
    const auto approx = structural_vector(d4, d8, 5);
    CHECK(approx.ted_approx);
    CHECK(approx.ted_norm() == doctest::Approx(1.0 - approx.subtree_jaccard()));
}
