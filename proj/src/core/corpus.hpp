#pragma once
// Corpus curation: length filter, hash dedup, project-isolated splits,
// per-label sampling and diversity selection for weak/semantic clones.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/common.hpp"

namespace clonefuse::corpus {

enum class Split { Train, Validation, Test, Unassigned };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct CodeFragment {
    std::string fragment_id;
    std::string project_id;
    std::string source_text;
    std::size_t char_length = 0;
    std::string content_hash;

    // Validates UTF-8 and fills char_length / content_hash.
    static CodeFragment make(std::string fragment_id, std::string project_id, std::string source_text);
};

struct PairRecord {
    std::string pair_id;
    std::string left;
    std::string right;
    int label = 0;
    Split split = Split::Unassigned;
};

struct SplitPlan {
    double train_ratio = 0.7;
    double validation_ratio = 0.1;
    double test_ratio = 0.2;
    std::map<int, std::size_t> train_caps = {{0, 40000}, {6, 25000}};
    std::size_t validation_target = 1428;
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-line strip, collapse internal whitespace runs to one space.
std::string normalize_for_hash(std::string_view source);

std::vector<CodeFragment> filter_and_dedup(const std::vector<CodeFragment>& fragments,
                                           std::size_t min_chars = 200);

// Projects are ranked by a seeded digest of their id and cut into
// contiguous blocks whose sizes follow the plan ratios (largest remainder).
std::map<std::string, Split> assign_project_splits(const std::set<std::string>& projects, const SplitPlan& plan);

// Uniform without replacement; retained pairs keep their input order.
std::vector<PairRecord> sample_training_set(const std::vector<PairRecord>& pairs, const SplitPlan& plan);
std::vector<PairRecord> sample_validation_set(const std::vector<PairRecord>& pairs, const SplitPlan& plan);

using FragmentLookup = std::unordered_map<std::string, const CodeFragment*>;

struct DiversityOptions {
    std::size_t bins_per_axis = 4;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
};

// Greedy max-min-diversity order over precomputed token sets: starting from
// `first`, repeatedly append the candidate whose maximum Jaccard similarity
// to the already selected items is smallest (ties: lowest index).
std::vector<std::size_t> greedy_diverse_order(const std::vector<std::set<std::string>>& token_sets,
                                              std::size_t budget, std::size_t first);

std::vector<PairRecord> diversity_select(const std::vector<PairRecord>& candidates, const FragmentLookup& fragments,
                                         const DiversityOptions& options);

// Control-flow keyword count used as the complexity axis of the binning grid.
std::size_t control_flow_tokens(std::string_view source);

struct CurationStats {
    std::size_t fragments_in = 0;
    std::size_t dropped_short = 0;
    std::size_t dropped_duplicate = 0;
    std::size_t pairs_in = 0;
    std::size_t pairs_missing_fragment = 0;
    std::size_t pairs_duplicate = 0;
    std::size_t pairs_self = 0;
    std::size_t pairs_cross_split = 0;
    std::map<std::string, std::size_t> projects_per_split;
    std::map<std::string, std::map<int, std::size_t>> label_counts;  // split -> label -> count

    json to_json() const;
};

struct CurationResult {
    std::vector<CodeFragment> fragments;
    std::map<std::string, Split> project_splits;
    std::vector<PairRecord> train;
    std::vector<PairRecord> validation;
    std::vector<PairRecord> test;
    CurationStats stats;
};

struct CurationOptions {
    SplitPlan plan;
    std::size_t min_chars = 200;
    bool diversity = true;
    std::size_t diversity_bins = 4;
};

CurationResult curate(const std::vector<CodeFragment>& fragments, const std::vector<PairRecord>& pairs,
                      const CurationOptions& options);

std::vector<CodeFragment> load_fragments(const std::filesystem::path& path);
std::vector<PairRecord> load_pairs(const std::filesystem::path& path);
json fragment_to_json(const CodeFragment& f);
json pair_to_json(const PairRecord& p);
void write_fragments(const std::filesystem::path& path, const std::vector<CodeFragment>& fragments);
void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);

}  // namespace clonefuse::corpus
