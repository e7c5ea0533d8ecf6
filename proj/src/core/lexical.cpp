#include "core/lexical.hpp"

#include <algorithm>
#include <cmath>

namespace clonefuse::lexical {

namespace {

bool is_ident_start(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_char(char c) { return is_ident_start(c) || is_digit(c); }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t code_point_width(unsigned char c) {
    if (c < 0x80) return 1;
    if ((c & 0xE0) == 0xC0) return 2;
    if ((c & 0xF0) == 0xE0) return 3;
    if ((c & 0xF8) == 0xF0) return 4;
    return 1;
}

std::size_t scan_quoted(std::string_view s, std::size_t i, char quote) {
    // i points at the opening quote; returns one past the closing quote, or
    // the end of the line for an unterminated literal.
    std::size_t j = i + 1;
    while (j < s.size()) {
        if (s[j] == '\\' && j + 1 < s.size()) {
            j += 2;
            continue;
        }
        if (s[j] == quote) return j + 1;
        if (s[j] == '\n') return j;
        ++j;
    }
    return j;
}

}  // namespace

TokenSequence TokenSequence::from_tokens(std::vector<std::string> tokens) {
    TokenSequence seq;
    seq.tokens = std::move(tokens);
    for (const auto& t : seq.tokens) ++seq.counts[t];
    return seq;
}

TokenSequence tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const char c = s[i];
        if (is_space(c)) {
            ++i;
        } else if (c == '/' && i + 1 < n && s[i + 1] == '/') {
            while (i < n && s[i] != '\n') ++i;
        } else if (c == '/' && i + 1 < n && s[i + 1] == '*') {
            const auto end = s.find("*/", i + 2);
            i = end == std::string_view::npos ? n : end + 2;
        } else if (is_ident_start(c)) {
            std::size_t j = i + 1;
            while (j < n && is_ident_char(s[j])) ++j;
            out.emplace_back(s.substr(i, j - i));
            i = j;
        } else if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(s[i + 1]))) {
            std::size_t j = i + 1;
            const bool hex = c == '0' && j < n && (s[j] == 'x' || s[j] == 'X');
            while (j < n) {
                const char d = s[j];
                if (is_ident_char(d) || d == '.') {
                    ++j;
                } else if ((d == '+' || d == '-') && !hex && (s[j - 1] == 'e' || s[j - 1] == 'E')) {
                    ++j;
                } else {
                    break;
                }
            }
            out.emplace_back(s.substr(i, j - i));
            i = j;
        } else if (c == '"' && s.substr(i, 3) == "\"\"\"") {
            const auto end = s.find("\"\"\"", i + 3);
            const std::size_t j = end == std::string_view::npos ? n : end + 3;
            out.emplace_back(s.substr(i, j - i));
            i = j;
        } else if (c == '"' || c == '\'') {
            const std::size_t j = scan_quoted(s, i, c);
            out.emplace_back(s.substr(i, j - i));
            i = j;
        } else {
            const std::size_t w = std::min(code_point_width(static_cast<unsigned char>(c)), n - i);
            out.emplace_back(s.substr(i, w));
            i += w;
        }
    }
    return TokenSequence::from_tokens(std::move(out));
}

SetSimilarities set_similarities(const TokenSequence& a, const TokenSequence& b) {
    SetSimilarities r;
    const std::size_t na = a.counts.size();
    const std::size_t nb = b.counts.size();
    if (na == 0 && nb == 0) return {1.0, 1.0, 1.0, 1.0};
    if (na == 0 || nb == 0) return r;

    std::size_t inter = 0;
    double dot = 0;
    // Both maps are ordered; merge-walk them.
    auto ia = a.counts.begin();
    auto ib = b.counts.begin();
    while (ia != a.counts.end() && ib != b.counts.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            ++inter;
            dot += static_cast<double>(ia->second) * static_cast<double>(ib->second);
            ++ia;
            ++ib;
        }
    }
    double norm_a = 0, norm_b = 0;
    for (const auto& [_, c] : a.counts) norm_a += static_cast<double>(c) * static_cast<double>(c);
    for (const auto& [_, c] : b.counts) norm_b += static_cast<double>(c) * static_cast<double>(c);

    const double i = static_cast<double>(inter);
    r.jaccard = i / static_cast<double>(na + nb - inter);
    r.dice = 2.0 * i / static_cast<double>(na + nb);
    r.overlap = i / static_cast<double>(std::min(na, nb));
    r.cosine = std::clamp(dot / (std::sqrt(norm_a) * std::sqrt(norm_b)), 0.0, 1.0);
    return r;
}

std::size_t levenshtein_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

LevenshteinResult levenshtein_norm(const TokenSequence& a, const TokenSequence& b) {
    LevenshteinResult r;
    if (a.tokens.empty() && b.tokens.empty()) return r;
    const std::vector<std::string>* pa = &a.tokens;
    const std::vector<std::string>* pb = &b.tokens;
    std::vector<std::string> ta, tb;
    if (pa->size() > kLevenshteinTokenCap) {
        ta.assign(pa->begin(), pa->begin() + kLevenshteinTokenCap);
        pa = &ta;
        r.truncated = true;
    }
    if (pb->size() > kLevenshteinTokenCap) {
        tb.assign(pb->begin(), pb->begin() + kLevenshteinTokenCap);
        pb = &tb;
        r.truncated = true;
    }
    const auto d = levenshtein_distance(*pa, *pb);
    r.normalized = static_cast<double>(d) / static_cast<double>(std::max(pa->size(), pb->size()));
    return r;
}

IdfTable IdfTable::fit(const std::vector<TokenSequence>& documents) {
    IdfTable t;
    t.fitted_ = true;
    t.n_docs_ = documents.size();
    for (const auto& d : documents)
        for (const auto& [tok, _] : d.counts) ++t.df_[tok];
    return t;
}

double IdfTable::idf(const std::string& token) const {
    if (!fitted_) fail(ErrorCode::InvalidArgument, "idf table is not fitted");
    const auto it = df_.find(token);
    const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(n_docs_)) / (1.0 + df)) + 1.0;
}

json IdfTable::to_json() const {
    json df = json::object();
    for (const auto& [tok, c] : df_) df[tok] = c;
    return json{{"documents", n_docs_}, {"df", df}};
}

IdfTable IdfTable::from_json(const json& j) {
    IdfTable t;
    try {
        t.n_docs_ = j.at("documents").get<std::size_t>();
        for (const auto& [tok, c] : j.at("df").items()) t.df_[tok] = c.get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("idf table: ") + e.what());
    }
    t.fitted_ = true;
    return t;
}

double tfidf_cosine(const TokenSequence& a, const TokenSequence& b, const IdfTable& idf) {
    if (!idf.fitted()) fail(ErrorCode::InvalidArgument, "tfidf_cosine: idf table is not fitted");
    if (a.counts.empty() && b.counts.empty()) return 1.0;
    if (a.counts.empty() || b.counts.empty()) return 0.0;
    double dot = 0, na = 0, nb = 0;
    for (const auto& [tok, c] : a.counts) {
        const double w = static_cast<double>(c) * idf.idf(tok);
        na += w * w;
        const auto it = b.counts.find(tok);
        if (it != b.counts.end()) dot += w * static_cast<double>(it->second) * idf.idf(tok);
    }
    for (const auto& [tok, c] : b.counts) {
        const double w = static_cast<double>(c) * idf.idf(tok);
        nb += w * w;
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

std::array<double, kLexicalDim> LexicalFeatureVector::to_array() const {
    return {jaccard,     dice,         overlap,    cosine,      levenshtein_norm, tfidf_cosine,
            unique_left, unique_right, total_left, total_right, shared,           sim_mean,
            sim_std,     sim_max,      sim_min,    token_ratio, token_diff,       interaction};
}

LexicalFeatureVector LexicalFeatureVector::from_array(const std::array<double, kLexicalDim>& v) {
    LexicalFeatureVector f;
    f.jaccard = v[0];
    f.dice = v[1];
    f.overlap = v[2];
    f.cosine = v[3];
    f.levenshtein_norm = v[4];
    f.tfidf_cosine = v[5];
    f.unique_left = v[6];
    f.unique_right = v[7];
    f.total_left = v[8];
    f.total_right = v[9];
    f.shared = v[10];
    f.sim_mean = v[11];
    f.sim_std = v[12];
    f.sim_max = v[13];
    f.sim_min = v[14];
    f.token_ratio = v[15];
    f.token_diff = v[16];
    f.interaction = v[17];
    return f;
}

LexicalFeatureVector assemble_features(const TokenSequence& a, const TokenSequence& b, const IdfTable& idf) {
    LexicalFeatureVector f;
    const auto sets = set_similarities(a, b);
    const auto lev = levenshtein_norm(a, b);
    f.jaccard = sets.jaccard;
    f.dice = sets.dice;
    f.overlap = sets.overlap;
    f.cosine = sets.cosine;
    f.levenshtein_norm = lev.normalized;
    f.truncated = lev.truncated;
    f.tfidf_cosine = tfidf_cosine(a, b, idf);

    f.unique_left = static_cast<double>(a.unique());
    f.unique_right = static_cast<double>(b.unique());
    f.total_left = static_cast<double>(a.size());
    f.total_right = static_cast<double>(b.size());
    std::size_t shared = 0;
    for (const auto& [tok, _] : a.counts) shared += b.counts.count(tok);
    f.shared = static_cast<double>(shared);

    // Every aggregate member is oriented "higher = more similar".
    const std::array<double, 6> sims = {f.jaccard, f.dice,           f.overlap,
                                        f.cosine,  1.0 - f.levenshtein_norm, f.tfidf_cosine};
    double sum = 0;
    for (double s : sims) sum += s;
    f.sim_mean = sum / 6.0;
    double var = 0;
    for (double s : sims) var += (s - f.sim_mean) * (s - f.sim_mean);
    f.sim_std = std::sqrt(var / 6.0);
    f.sim_max = *std::max_element(sims.begin(), sims.end());
    f.sim_min = *std::min_element(sims.begin(), sims.end());
    f.sim_mean = std::clamp(f.sim_mean, f.sim_min, f.sim_max);  // rounding on near-equal members

    const double lo = std::min(f.total_left, f.total_right);
    const double hi = std::max(f.total_left, f.total_right);
    f.token_ratio = hi == 0 ? 1.0 : lo / hi;
    f.token_diff = std::abs(f.total_left - f.total_right);
    f.interaction = f.cosine * (1.0 - f.levenshtein_norm);
    return f;
}

}  // namespace clonefuse::lexical
