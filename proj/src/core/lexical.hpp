#pragma once
// Token-level lexical similarity features for a code pair.

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "core/common.hpp"

namespace clonefuse::lexical {

struct TokenSequence {
    std::vector<std::string> tokens;
    std::map<std::string, std::size_t> counts;  // multiset view

    static TokenSequence from_tokens(std::vector<std::string> tokens);
    std::size_t size() const { return tokens.size(); }
    std::size_t unique() const { return counts.size(); }
};

// Identifiers [A-Za-z_][A-Za-z0-9_]*, numeric literals, string and char
// literals as single tokens, everything else one code point per token.
// Line and block comments are dropped.
TokenSequence tokenize(std::string_view source);

struct SetSimilarities {
    double jaccard = 0;
    double dice = 0;
    double overlap = 0;
    double cosine = 0;
};

SetSimilarities set_similarities(const TokenSequence& a, const TokenSequence& b);

inline constexpr std::size_t kLevenshteinTokenCap = 2000;

struct LevenshteinResult {
    double normalized = 0;
    bool truncated = false;
};

// Unit-cost token edit distance divided by max(|a|, |b|). Sequences longer
// than kLevenshteinTokenCap are truncated first and the flag is set.
LevenshteinResult levenshtein_norm(const TokenSequence& a, const TokenSequence& b);
std::size_t levenshtein_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Smoothed inverse document frequency: ln((1+N)/(1+df)) + 1.
class IdfTable {
public:
    IdfTable() = default;
    static IdfTable fit(const std::vector<TokenSequence>& documents);

    bool fitted() const { return fitted_; }
    std::size_t documents() const { return n_docs_; }
    double idf(const std::string& token) const;

    json to_json() const;
    static IdfTable from_json(const json& j);

private:
    bool fitted_ = false;
    std::size_t n_docs_ = 0;
    std::map<std::string, std::size_t> df_;
};

double tfidf_cosine(const TokenSequence& a, const TokenSequence& b, const IdfTable& idf);

inline constexpr std::size_t kLexicalDim = 18;

// Field order of the serialized 18-vector (feature cache, prior model).
inline constexpr std::array<std::string_view, kLexicalDim> kLexicalFieldOrder = {
    "jaccard",      "dice",         "overlap",    "cosine",      "levenshtein_norm", "tfidf_cosine",
    "unique_left",  "unique_right", "total_left", "total_right", "shared",           "sim_mean",
    "sim_std",      "sim_max",      "sim_min",    "token_ratio", "token_diff",       "interaction",
};

struct LexicalFeatureVector {
    double jaccard = 0, dice = 0, overlap = 0, cosine = 0, levenshtein_norm = 0, tfidf_cosine = 0;
    double unique_left = 0, unique_right = 0, total_left = 0, total_right = 0, shared = 0;
    double sim_mean = 0, sim_std = 0, sim_max = 0, sim_min = 0;
    double token_ratio = 0, token_diff = 0, interaction = 0;
    bool truncated = false;

    std::array<double, kLexicalDim> to_array() const;
    static LexicalFeatureVector from_array(const std::array<double, kLexicalDim>& v);
};

LexicalFeatureVector assemble_features(const TokenSequence& a, const TokenSequence& b, const IdfTable& idf);

}  // namespace clonefuse::lexical
