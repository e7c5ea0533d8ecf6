#include <doctest.h>

#include <random>

#include "core/lexical.hpp"
#include "oracles.hpp"

using namespace clonefuse;
using namespace clonefuse::lexical;

namespace {
TokenSequence seq(std::vector<std::string> t) { return TokenSequence::from_tokens(std::move(t)); }
}  // namespace

TEST_CASE("tokenize follows the grammar") {
    CHECK(tokenize("int a = b + 1;").tokens == std::vector<std::string>{"int", "a", "=", "b", "+", "1", ";"});
    CHECK(tokenize("").tokens.empty());
    CHECK(tokenize("// only a comment").tokens.empty());
    CHECK(tokenize("/* block\n comment */ x").tokens == std::vector<std::string>{"x"});
    CHECK(tokenize("s = \"a b // c\";").tokens == std::vector<std::string>{"s", "=", "\"a b // c\"", ";"});
    CHECK(tokenize("c = 'x'; d = 3.5e2f;").tokens ==
          std::vector<std::string>{"c", "=", "'x'", ";", "d", "=", "3.5e2f", ";"});
    const auto t = tokenize("a a b");
    CHECK(t.counts.at("a") == 2);
    CHECK(t.unique() == 2);
}

TEST_CASE("set similarities: worked example and edge cases") {
    const auto r = set_similarities(seq({"a", "b", "c"}), seq({"b", "c", "d"}));
    CHECK(r.jaccard == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.dice == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.overlap == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    const auto same = set_similarities(seq({"x", "y", "x"}), seq({"x", "y", "x"}));
    CHECK(same.jaccard == 1.0);
    CHECK(same.cosine == doctest::Approx(1.0));
    const auto disjoint = set_similarities(seq({"a"}), seq({"b"}));
    CHECK(disjoint.jaccard == 0.0);
    CHECK(disjoint.cosine == 0.0);
    const auto ee = set_similarities(seq({}), seq({}));
    CHECK(ee.jaccard == 1.0);
    CHECK(ee.overlap == 1.0);
    const auto en = set_similarities(seq({}), seq({"a"}));
    CHECK(en.dice == 0.0);
    CHECK(en.cosine == 0.0);
}

TEST_CASE("levenshtein: kitten/sitting and edge cases") {
    const auto k = seq({"k", "i", "t", "t", "e", "n"});
    const auto s = seq({"s", "i", "t", "t", "i", "n", "g"});
    CHECK(levenshtein_distance(k.tokens, s.tokens) == 3);
    CHECK(levenshtein_norm(k, s).normalized == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
    CHECK(levenshtein_norm(k, k).normalized == 0.0);
    CHECK(levenshtein_norm(seq({"x"}), seq({})).normalized == 1.0);
    CHECK(levenshtein_norm(seq({}), seq({})).normalized == 0.0);
}

TEST_CASE("levenshtein truncates long inputs and flags it") {
    std::vector<std::string> a(kLevenshteinTokenCap + 5, "a");
    const auto r = levenshtein_norm(seq(a), seq({"a"}));
    CHECK(r.truncated);
    CHECK(r.normalized == doctest::Approx(double(kLevenshteinTokenCap - 1) / double(kLevenshteinTokenCap)));
}

TEST_CASE("tf-idf cosine on a two-document corpus") {
    // d1=[a,b], d2=[a,c]; idf(a)=ln(3/3)+1=1, idf(b)=idf(c)=ln(3/2)+1.
    const auto d1 = seq({"a", "b"}), d2 = seq({"a", "c"});
    const auto idf = IdfTable::fit({d1, d2});
    const double wb = std::log(1.5) + 1.0;
    const double want = 1.0 / (1.0 + wb * wb);
    CHECK(tfidf_cosine(d1, d2, idf) == doctest::Approx(want).epsilon(1e-14));
    CHECK(tfidf_cosine(d1, d1, idf) == doctest::Approx(1.0));
    CHECK(tfidf_cosine(seq({"q"}), seq({"r"}), idf) == 0.0);
    CHECK_THROWS_AS(tfidf_cosine(d1, d2, IdfTable{}), Error);
}

TEST_CASE("idf table json round trip") {
    const auto idf = IdfTable::fit({seq({"a", "b"}), seq({"a"}), seq({"z"})});
    const auto back = IdfTable::from_json(idf.to_json());
    for (const char* t : {"a", "b", "z", "unseen"}) CHECK(back.idf(t) == idf.idf(t));
    CHECK_THROWS_AS(IdfTable::from_json(json{{"nope", 1}}), Error);
}

TEST_CASE("oracle equivalence on 500 random pairs") {
    std::mt19937_64 g(20240611);
    std::vector<std::pair<oracle::Tokens, oracle::Tokens>> pairs;
    std::vector<oracle::Tokens> corpus;
    for (int i = 0; i < 500; ++i) {
        pairs.emplace_back(oracle::random_tokens(g, 30, 10), oracle::random_tokens(g, 30, 10));
        corpus.push_back(pairs.back().first);
        corpus.push_back(pairs.back().second);
    }
    std::vector<TokenSequence> docs;
    for (const auto& c : corpus) docs.push_back(seq(c));
    const auto idf = IdfTable::fit(docs);

    for (const auto& [a, b] : pairs) {
        const auto want = oracle::set_sims(a, b);
        const auto A = seq(a), B = seq(b);
        const auto got = assemble_features(A, B, idf);
        CHECK(std::abs(got.jaccard - want.jaccard) <= 1e-12);
        CHECK(std::abs(got.dice - want.dice) <= 1e-12);
        CHECK(std::abs(got.overlap - want.overlap) <= 1e-12);
        CHECK(std::abs(got.cosine - want.cosine) <= 1e-12);
        CHECK(levenshtein_distance(a, b) == oracle::edit_distance(a, b));
        CHECK(std::abs(got.levenshtein_norm - oracle::levenshtein_norm(a, b)) <= 1e-12);
        CHECK(std::abs(got.tfidf_cosine - oracle::tfidf_cosine(a, b, corpus)) <= 1e-12);
        CHECK(got.shared == double(want.inter));
        CHECK(got.unique_left == double(oracle::distinct(a).size()));
        CHECK(got.total_right == double(b.size()));
        CHECK(std::abs(got.interaction - got.cosine * (1.0 - got.levenshtein_norm)) <= 1e-12);
        CHECK(got.sim_min <= got.sim_mean);
        CHECK(got.sim_mean <= got.sim_max);
        // symmetry
        const auto rev = assemble_features(B, A, idf);
        CHECK(rev.jaccard == got.jaccard);
        CHECK(rev.levenshtein_norm == got.levenshtein_norm);
        CHECK(std::abs(rev.tfidf_cosine - got.tfidf_cosine) <= 1e-12);
    }
}

TEST_CASE("aggregates use 1 - levenshtein and population std") {
    const auto a = seq({"a", "b", "c", "d"});
    const auto b = seq({"a", "b", "x"});
    const auto idf = IdfTable::fit({a, b});
    const auto f = assemble_features(a, b, idf);
    const std::array<double, 6> s = {f.jaccard, f.dice, f.overlap, f.cosine, 1 - f.levenshtein_norm, f.tfidf_cosine};
    double mean = 0;
    for (double v : s) mean += v / 6.0;
    double var = 0;
    for (double v : s) var += (v - mean) * (v - mean) / 6.0;
    CHECK(f.sim_mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(f.sim_std == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    CHECK(f.token_ratio == doctest::Approx(0.75));
    CHECK(f.token_diff == 1.0);

    const auto same = assemble_features(a, a, idf);
    CHECK(same.sim_std == 0.0);
    CHECK(same.sim_mean == doctest::Approx(1.0));

    const auto empty = assemble_features(seq({}), seq({}), idf);
    CHECK(empty.token_ratio == 1.0);
    CHECK(empty.token_diff == 0.0);
    CHECK(empty.shared == 0.0);
}

TEST_CASE("feature array order round trips") {
    const auto a = seq({"p", "q"}), b = seq({"q", "r", "r"});
    const auto f = assemble_features(a, b, IdfTable::fit({a, b}));
    const auto arr = f.to_array();
    CHECK(arr[0] == f.jaccard);
    CHECK(arr[4] == f.levenshtein_norm);
    CHECK(arr[17] == f.interaction);
    CHECK(LexicalFeatureVector::from_array(arr).to_array() == arr);
    CHECK(kLexicalFieldOrder[5] == "tfidf_cosine");
}
