#pragma once
// Heuristic prior: maps the 18-field lexical vector to a 7-class
// probability vector used as the FiLM conditioning input.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/lexical.hpp"

namespace clonefuse::prior {

using PriorVector = std::array<double, kNumClasses>;
using FeatureRow = std::array<double, lexical::kLexicalDim>;

enum class ModelKind { Gbdt, SoftmaxRegression };

const char* model_kind_name(ModelKind k);
ModelKind parse_model_kind(const std::string& name);

struct PriorConfig {
    ModelKind kind = ModelKind::Gbdt;
    std::uint64_t seed = 0;
    // gbdt
    int rounds = 100;
    int max_depth = 3;
    double shrinkage = 0.1;
    int max_bins = 256;
    double leaf_l2 = 1.0;
    double min_child_hessian = 1e-3;
    // softmax regression
    double l2 = 1e-3;
    int iterations = 500;
    double learning_rate = 0.5;

    json to_json() const;
};

struct TrainingRow {
    FeatureRow x{};
    int label = 0;
    std::string pair_id;
};

// Flat regression tree; a node with feature < 0 is a leaf.
struct TreeNode {
    int feature = -1;
    double threshold = 0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0;
};

class PriorModel {
public:
    static constexpr int kVersion = 1;

    ModelKind kind() const { return kind_; }
    int version() const { return version_; }
    const std::vector<std::string>& feature_order() const { return feature_order_; }

    json to_json() const;
    static PriorModel from_json(const json& j);

    // Softmax regression with all-zero parameters (uniform output).
    static PriorModel zero_softmax();

    friend PriorModel fit_prior(const std::vector<TrainingRow>& rows, const PriorConfig& config);
    friend PriorVector predict_prior(const PriorModel& model, const FeatureRow& x);

private:
    std::vector<std::string> feature_order_;
    ModelKind kind_ = ModelKind::SoftmaxRegression;
    int version_ = kVersion;
    json config_;
    // gbdt
    std::array<double, kNumClasses> init_scores_{};
    std::vector<std::vector<TreeNode>> trees_;  // round-major, kNumClasses per round
    // softmax regression (on standardized features)
    FeatureRow mean_{};
    FeatureRow scale_{};
    std::array<FeatureRow, kNumClasses> weights_{};
    std::array<double, kNumClasses> bias_{};
};

PriorModel fit_prior(const std::vector<TrainingRow>& rows, const PriorConfig& config);
PriorVector predict_prior(const PriorModel& model, const FeatureRow& x);

std::vector<std::string> canonical_feature_order();

}  // namespace clonefuse::prior
