#pragma once
// Evaluation: confusion matrix, per-class and macro/weighted P/R/F1,
// bootstrap interval for macro-F1, top-k coverage, confidence bins and the
// policy delta table.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/distribution.hpp"

namespace clonefuse::metrics {

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [truth][pred]

struct ClassScores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t support = 0;
};

struct PrfResult {
    std::size_t n = 0;
    Confusion confusion{};
    std::array<ClassScores, kNumClasses> per_class{};
    double accuracy = 0;
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;

    json to_json() const;
};

// Undefined ratios are 0; macro averages always divide by 7.
PrfResult confusion_and_prf(const std::vector<int>& truths, const std::vector<int>& preds);
double macro_f1(const std::vector<int>& truths, const std::vector<int>& preds);

// The k most probable labels, ties to the lower index.
std::vector<int> topk_labels(const ClassVector& p, int k);
double topk_coverage(const std::vector<int>& truths, const std::vector<ClassVector>& distributions, int k);

struct Interval {
    double low = 0;
    double high = 0;
};

// Percentile bootstrap (2.5 / 97.5, linear interpolation between order
// statistics) of macro-F1.
Interval bootstrap_ci(const std::vector<int>& truths, const std::vector<int>& preds, std::size_t resamples = 1000,
                      std::uint64_t seed = 0);

struct ConfidenceBin {
    double low = 0;
    double high = 0;
    std::size_t count = 0;
    double accuracy = 0;
    double macro_f1 = 0;
    double weighted_f1 = 0;
};

// Bins are [e_i, e_{i+1}); the last one also holds e_last. Predictions are
// the argmax of each distribution.
std::vector<ConfidenceBin> confidence_bin_report(const std::vector<int>& truths,
                                                 const std::vector<ClassVector>& distributions,
                                                 const std::vector<double>& edges);
std::vector<double> parse_bin_edges(const std::string& text);

struct PolicyRow {
    double accuracy = 0;
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;

    static PolicyRow from(const PrfResult& r);
    json to_json() const;
};

struct PolicyComparison {
    PolicyRow base;
    PolicyRow arbitrated;
    PolicyRow delta;  // arbitrated - base
    std::size_t changed = 0;

    json to_json() const;
};

// Both decision maps must cover exactly the same pair ids, all present in
// `truths`.
PolicyComparison compare_policies(const std::map<std::string, int>& truths, const std::map<std::string, int>& base,
                                  const std::map<std::string, int>& arbitrated);

struct EvalReport {
    PrfResult prf;
    std::map<int, double> topk;  // empty when no distributions were given
    Interval ci_95;
    std::vector<ConfidenceBin> confidence_bins;
    std::optional<double> arbitration_fraction;
    std::optional<PolicyComparison> comparison;

    json to_json() const;
};

std::string confusion_csv(const Confusion& c);

}  // namespace clonefuse::metrics
