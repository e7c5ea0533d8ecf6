#include "core/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "core/lexical.hpp"

namespace clonefuse::corpus {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "validation") return Split::Validation;
    if (name == "test") return Split::Test;
    if (name == "unassigned" || name.empty()) return Split::Unassigned;
    fail(ErrorCode::Format, "unknown split '" + name + "'");
}

CodeFragment CodeFragment::make(std::string fragment_id, std::string project_id, std::string source_text) {
    const auto bad = utf8_invalid_offset(source_text);
    if (bad != std::string_view::npos)
        fail(ErrorCode::Format,
             "fragment '" + fragment_id + "': invalid UTF-8 at byte " + std::to_string(bad));
    CodeFragment f;
    f.fragment_id = std::move(fragment_id);
    f.project_id = std::move(project_id);
    f.source_text = std::move(source_text);
    f.char_length = utf8_length(f.source_text);
    f.content_hash = sha256_hex(normalize_for_hash(f.source_text));
    return f;
}

void SplitPlan::validate() const {
    const double sum = train_ratio + validation_ratio + test_ratio;
    if (std::abs(sum - 1.0) > 1e-9)
        fail(ErrorCode::InvalidArgument, "split ratios must sum to 1 (got " + std::to_string(sum) + ")");
    if (train_ratio < 0 || validation_ratio < 0 || test_ratio < 0)
        fail(ErrorCode::InvalidArgument, "split ratios must be non-negative");
}

std::string normalize_for_hash(std::string_view source) {
    std::string out;
    out.reserve(source.size());
    std::size_t pos = 0;
    bool first_line = true;
    while (pos <= source.size()) {
        auto nl = source.find('\n', pos);
        if (nl == std::string_view::npos) nl = source.size();
        const std::string_view line = source.substr(pos, nl - pos);
        if (!first_line) out.push_back('\n');
        first_line = false;
        bool pending_space = false;
        bool any = false;
        for (char c : line) {
            if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
                pending_space = any;
            } else {
                if (pending_space) out.push_back(' ');
                pending_space = false;
                out.push_back(c);
                any = true;
            }
        }
        pos = nl + 1;
    }
    return out;
}

std::vector<CodeFragment> filter_and_dedup(const std::vector<CodeFragment>& fragments, std::size_t min_chars) {
    std::vector<CodeFragment> out;
    std::unordered_set<std::string> seen;
    for (const auto& f : fragments) {
        if (f.char_length < min_chars) continue;
        if (!seen.insert(f.content_hash).second) continue;
        out.push_back(f);
    }
    return out;
}

namespace {

std::uint64_t seeded_rank(const std::string& id, std::uint64_t seed) {
    std::string buf(8, '\0');
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
    buf += id;
    const auto d = sha256_raw(buf);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
    return v;
}

// Splits `total` into integer parts proportional to `weights`, remainder to
// the largest fractional parts (ties: larger weight, then lower index).
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> parts(weights.size(), 0);
    if (wsum <= 0 || total == 0) return parts;
    std::vector<double> frac(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / wsum;
        parts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - static_cast<double>(parts[i]);
        assigned += parts[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        if (weights[a] != weights[b]) return weights[a] > weights[b];
        return a < b;
    });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++parts[order[k % order.size()]];
    return parts;
}

Rng stream_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(mix64(seed ^ mix64(stream + 0x51ed27))); }

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(population);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_index(population - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<PairRecord> cap_per_label(const std::vector<PairRecord>& pairs, const std::map<int, std::size_t>& caps,
                                      std::uint64_t seed, std::uint64_t stream_base) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < pairs.size(); ++i) by_label[pairs[i].label].push_back(i);
    std::vector<bool> keep(pairs.size(), true);
    for (const auto& [label, members] : by_label) {
        const auto cap = caps.find(label);
        if (cap == caps.end() || members.size() <= cap->second) continue;
        auto rng = stream_rng(seed, stream_base + static_cast<std::uint64_t>(label));
        const auto chosen = sample_indices(members.size(), cap->second, rng);
        for (auto m : members) keep[m] = false;
        for (auto c : chosen) keep[members[c]] = true;
    }
    std::vector<PairRecord> out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (keep[i]) out.push_back(pairs[i]);
    return out;
}

double set_jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// Bin index per item on one axis; equal values always share a bin.
std::vector<std::size_t> quantile_bins(const std::vector<double>& values, std::size_t bins) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<std::size_t> bin(n, 0);
    std::size_t rank = 0;
    while (rank < n) {
        std::size_t end = rank;
        while (end < n && values[order[end]] == values[order[rank]]) ++end;
        const std::size_t b = std::min(bins - 1, rank * bins / n);
        for (std::size_t k = rank; k < end; ++k) bin[order[k]] = b;
        rank = end;
    }
    return bin;
}

}  // namespace

std::map<std::string, Split> assign_project_splits(const std::set<std::string>& projects, const SplitPlan& plan) {
    if (projects.empty()) fail(ErrorCode::InvalidArgument, "assign_project_splits: empty project set");
    plan.validate();
    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    ranked.reserve(projects.size());
    for (const auto& p : projects) ranked.emplace_back(seeded_rank(p, plan.seed), p);
    std::sort(ranked.begin(), ranked.end());
    const auto sizes =
        largest_remainder(projects.size(), {plan.train_ratio, plan.validation_ratio, plan.test_ratio});
    std::map<std::string, Split> out;
    std::size_t k = 0;
    const Split order[3] = {Split::Train, Split::Validation, Split::Test};
    for (int s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < sizes[s]; ++i, ++k) out[ranked[k].second] = order[s];
    return out;
}

std::vector<PairRecord> sample_training_set(const std::vector<PairRecord>& pairs, const SplitPlan& plan) {
    return cap_per_label(pairs, plan.train_caps, plan.seed, 100);
}

std::vector<PairRecord> sample_validation_set(const std::vector<PairRecord>& pairs, const SplitPlan& plan) {
    std::map<int, std::size_t> caps;
    for (int l = 0; l < kNumClasses; ++l) caps[l] = plan.validation_target;
    return cap_per_label(pairs, caps, plan.seed, 200);
}

std::size_t control_flow_tokens(std::string_view source) {
    static const std::set<std::string, std::less<>> kControl = {"if", "for", "while", "switch", "catch"};
    std::size_t n = 0;
    for (const auto& t : lexical::tokenize(source).tokens)
        if (kControl.count(t)) ++n;
    return n;
}

std::vector<std::size_t> greedy_diverse_order(const std::vector<std::set<std::string>>& token_sets,
                                              std::size_t budget, std::size_t first) {
    const std::size_t n = token_sets.size();
    if (budget > n) fail(ErrorCode::InvalidArgument, "diversity budget exceeds candidate count");
    std::vector<std::size_t> picked;
    if (budget == 0) return picked;
    if (first >= n) fail(ErrorCode::InvalidArgument, "first pick out of range");
    std::vector<double> max_sim(n, -1.0);
    std::vector<bool> taken(n, false);
    std::size_t next = first;
    while (true) {
        picked.push_back(next);
        taken[next] = true;
        if (picked.size() == budget) break;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i]) max_sim[i] = std::max(max_sim[i], set_jaccard(token_sets[i], token_sets[next]));
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i] && (best == n || max_sim[i] < max_sim[best])) best = i;
        next = best;
    }
    return picked;
}

std::vector<PairRecord> diversity_select(const std::vector<PairRecord>& candidates, const FragmentLookup& fragments,
                                         const DiversityOptions& options) {
    const std::size_t n = candidates.size();
    if (options.budget > n)
        fail(ErrorCode::InvalidArgument, "diversity_select: budget " + std::to_string(options.budget) +
                                             " exceeds " + std::to_string(n) + " candidates");
    if (options.bins_per_axis == 0) fail(ErrorCode::InvalidArgument, "diversity_select: bins must be positive");
    if (options.budget == 0) return {};

    std::vector<std::set<std::string>> token_sets(n);
    std::vector<double> length(n), complexity(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto* id : {&candidates[i].left, &candidates[i].right}) {
            const auto it = fragments.find(*id);
            if (it == fragments.end()) fail(ErrorCode::NotFound, "diversity_select: unknown fragment " + *id);
            const auto& src = it->second->source_text;
            for (auto& t : lexical::tokenize(src).tokens) token_sets[i].insert(std::move(t));
            length[i] += static_cast<double>(it->second->char_length);
            complexity[i] += static_cast<double>(control_flow_tokens(src));
        }
    }

    const std::size_t b = options.bins_per_axis;
    const auto lbin = quantile_bins(length, b);
    const auto cbin = quantile_bins(complexity, b);
    std::vector<std::vector<std::size_t>> members(b * b);
    for (std::size_t i = 0; i < n; ++i) members[lbin[i] * b + cbin[i]].push_back(i);

    std::vector<double> sizes(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) sizes[k] = static_cast<double>(members[k].size());
    const auto quota = largest_remainder(options.budget, sizes);

    std::vector<PairRecord> out;
    out.reserve(options.budget);
    for (std::size_t k = 0; k < members.size(); ++k) {
        if (quota[k] == 0) continue;
        std::vector<std::set<std::string>> sets;
        sets.reserve(members[k].size());
        for (auto i : members[k]) sets.push_back(token_sets[i]);
        auto rng = stream_rng(options.seed, 300 + k);
        const auto first = static_cast<std::size_t>(rng.uniform_index(members[k].size()));
        for (auto local : greedy_diverse_order(sets, quota[k], first)) out.push_back(candidates[members[k][local]]);
    }
    return out;
}

json CurationStats::to_json() const {
    json labels = json::object();
    for (const auto& [split, counts] : label_counts) {
        json c = json::object();
        for (const auto& [l, n] : counts) c[std::to_string(l)] = n;
        labels[split] = c;
    }
    return json{{"fragments_in", fragments_in},
                {"dropped_short", dropped_short},
                {"dropped_duplicate", dropped_duplicate},
                {"pairs_in", pairs_in},
                {"pairs_missing_fragment", pairs_missing_fragment},
                {"pairs_duplicate", pairs_duplicate},
                {"pairs_self", pairs_self},
                {"pairs_cross_split", pairs_cross_split},
                {"projects_per_split", projects_per_split},
                {"label_counts", labels}};
}

CurationResult curate(const std::vector<CodeFragment>& fragments, const std::vector<PairRecord>& pairs,
                      const CurationOptions& options) {
    options.plan.validate();
    CurationResult r;
    r.stats.fragments_in = fragments.size();
    r.stats.pairs_in = pairs.size();

    {
        std::unordered_set<std::string> seen;
        for (const auto& f : fragments) {
            if (f.char_length < options.min_chars) {
                ++r.stats.dropped_short;
            } else if (seen.count(f.content_hash)) {
                ++r.stats.dropped_duplicate;
            } else {
                seen.insert(f.content_hash);
            }
        }
    }
    r.fragments = filter_and_dedup(fragments, options.min_chars);

    FragmentLookup lookup;
    std::set<std::string> projects;
    for (const auto& f : r.fragments) {
        lookup.emplace(f.fragment_id, &f);
        projects.insert(f.project_id);
    }
    if (projects.empty()) fail(ErrorCode::InvalidArgument, "curate: no fragments survive filtering");
    r.project_splits = assign_project_splits(projects, options.plan);
    for (const auto& [_, s] : r.project_splits) ++r.stats.projects_per_split[split_name(s)];

    std::vector<PairRecord> by_split[3];
    std::set<std::pair<std::string, std::string>> seen_pairs;
    for (const auto& p : pairs) {
        if (p.label < 0 || p.label >= kNumClasses)
            fail(ErrorCode::Format, "pair '" + p.pair_id + "': label out of range");
        const auto l = lookup.find(p.left);
        const auto rt = lookup.find(p.right);
        if (l == lookup.end() || rt == lookup.end()) {
            ++r.stats.pairs_missing_fragment;
            continue;
        }
        if (p.left == p.right) {
            ++r.stats.pairs_self;
            continue;
        }
        const auto key = std::minmax(p.left, p.right);
        if (!seen_pairs.insert({key.first, key.second}).second) {
            ++r.stats.pairs_duplicate;
            continue;
        }
        const Split sl = r.project_splits.at(l->second->project_id);
        const Split sr = r.project_splits.at(rt->second->project_id);
        if (sl != sr) {
            ++r.stats.pairs_cross_split;
            continue;
        }
        PairRecord q = p;
        q.split = sl;
        by_split[static_cast<int>(sl)].push_back(std::move(q));
    }

    // Training: uniform caps, except that an over-cap label 6 population is
    // thinned by diversity selection instead.
    auto train_plan = options.plan;
    std::vector<PairRecord> weak;
    const auto cap6 = options.plan.train_caps.find(6);
    std::size_t n6 = 0;
    for (const auto& p : by_split[0]) n6 += p.label == 6;
    const bool use_diversity = options.diversity && cap6 != options.plan.train_caps.end() && n6 > cap6->second;
    if (use_diversity) train_plan.train_caps.erase(6);
    auto capped = sample_training_set(by_split[0], train_plan);
    if (use_diversity) {
        for (const auto& p : capped)
            if (p.label == 6) weak.push_back(p);
        const auto chosen = diversity_select(
            weak, lookup, {options.diversity_bins, cap6->second, options.plan.seed});
        std::unordered_set<std::string> keep;
        for (const auto& p : chosen) keep.insert(p.pair_id);
        std::erase_if(capped, [&](const PairRecord& p) { return p.label == 6 && !keep.count(p.pair_id); });
    }
    r.train = std::move(capped);
    r.validation = sample_validation_set(by_split[1], options.plan);
    r.test = std::move(by_split[2]);

    for (const auto* set : {&r.train, &r.validation, &r.test})
        for (const auto& p : *set) ++r.stats.label_counts[split_name(p.split)][p.label];
    return r;
}

std::vector<CodeFragment> load_fragments(const std::filesystem::path& path) {
    std::vector<CodeFragment> out;
    for_each_jsonl(path, [&](const json& row, std::size_t line) {
        try {
            out.push_back(CodeFragment::make(row.at("fragment_id").get<std::string>(),
                                             row.at("project_id").get<std::string>(),
                                             row.at("source").get<std::string>()));
        } catch (const json::exception& e) {
            fail(ErrorCode::Format, path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

std::vector<PairRecord> load_pairs(const std::filesystem::path& path) {
    std::vector<PairRecord> out;
    for_each_jsonl(path, [&](const json& row, std::size_t line) {
        try {
            PairRecord p;
            p.pair_id = row.at("pair_id").get<std::string>();
            p.left = row.at("left").get<std::string>();
            p.right = row.at("right").get<std::string>();
            p.label = row.at("label").get<int>();
            if (row.contains("split") && !row["split"].is_null()) p.split = parse_split(row["split"].get<std::string>());
            if (p.label < 0 || p.label >= kNumClasses)
                fail(ErrorCode::Format, "label " + std::to_string(p.label) + " out of range");
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            fail(ErrorCode::Format, path.string() + ":" + std::to_string(line) + ": " + e.what());
        } catch (const Error& e) {
            fail(ErrorCode::Format, path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

json fragment_to_json(const CodeFragment& f) {
    return json{{"fragment_id", f.fragment_id}, {"project_id", f.project_id}, {"source", f.source_text}};
}

json pair_to_json(const PairRecord& p) {
    return json{{"pair_id", p.pair_id}, {"left", p.left}, {"right", p.right}, {"label", p.label},
                {"split", split_name(p.split)}};
}

void write_fragments(const std::filesystem::path& path, const std::vector<CodeFragment>& fragments) {
    std::vector<json> rows;
    rows.reserve(fragments.size());
    for (const auto& f : fragments) rows.push_back(fragment_to_json(f));
    write_jsonl(path, rows);
}

void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& pairs) {
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(pair_to_json(p));
    write_jsonl(path, rows);
}

}  // namespace clonefuse::corpus
