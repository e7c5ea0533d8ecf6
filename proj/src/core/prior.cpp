#include "core/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace clonefuse::prior {

const char* model_kind_name(ModelKind k) { return k == ModelKind::Gbdt ? "gbdt" : "softmax_regression"; }

ModelKind parse_model_kind(const std::string& name) {
    if (name == "gbdt") return ModelKind::Gbdt;
    if (name == "softmax_regression" || name == "softmax") return ModelKind::SoftmaxRegression;
    fail(ErrorCode::InvalidArgument, "unknown prior model kind '" + name + "'");
}

std::vector<std::string> canonical_feature_order() {
    return {lexical::kLexicalFieldOrder.begin(), lexical::kLexicalFieldOrder.end()};
}

json PriorConfig::to_json() const {
    json j = {{"kind", model_kind_name(kind)}, {"seed", seed}};
    if (kind == ModelKind::Gbdt) {
        j.update({{"rounds", rounds},
                  {"max_depth", max_depth},
                  {"shrinkage", shrinkage},
                  {"max_bins", max_bins},
                  {"leaf_l2", leaf_l2},
                  {"min_child_hessian", min_child_hessian}});
    } else {
        j.update({{"l2", l2}, {"iterations", iterations}, {"learning_rate", learning_rate}});
    }
    return j;
}

namespace {

constexpr std::size_t D = lexical::kLexicalDim;

void softmax_inplace(std::array<double, kNumClasses>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

void validate_rows(const std::vector<TrainingRow>& rows) {
    std::array<std::size_t, kNumClasses> counts{};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.label < 0 || r.label >= kNumClasses)
            fail(ErrorCode::InvalidArgument, "prior training row " + std::to_string(i) + ": label out of range");
        for (std::size_t f = 0; f < D; ++f)
            if (!std::isfinite(r.x[f]))
                fail(ErrorCode::Numeric, "prior training: non-finite feature '" +
                                             std::string(lexical::kLexicalFieldOrder[f]) + "' in pair '" +
                                             (r.pair_id.empty() ? "#" + std::to_string(i) : r.pair_id) + "'");
        ++counts[static_cast<std::size_t>(r.label)];
    }
    const auto distinct = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
    if (distinct < 2) fail(ErrorCode::InvalidArgument, "prior training needs at least two distinct labels");
}

// ---- gradient boosting ---------------------------------------------------

struct Binned {
    std::vector<std::vector<double>> thresholds;  // per feature, ascending cut points
    std::vector<std::vector<std::uint16_t>> bins; // per feature, per row
};

Binned quantize(const std::vector<TrainingRow>& rows, int max_bins) {
    Binned b;
    b.thresholds.resize(D);
    b.bins.assign(D, std::vector<std::uint16_t>(rows.size(), 0));
    std::vector<double> vals(rows.size());
    for (std::size_t f = 0; f < D; ++f) {
        for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = rows[i].x[f];
        std::vector<double> sorted = vals;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> uniq = sorted;
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        auto& cuts = b.thresholds[f];
        if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
            for (std::size_t k = 0; k + 1 < uniq.size(); ++k) cuts.push_back(0.5 * (uniq[k] + uniq[k + 1]));
        } else {
            for (int k = 1; k < max_bins; ++k) {
                const std::size_t pos = static_cast<std::size_t>(k) * sorted.size() / static_cast<std::size_t>(max_bins);
                const double lo = sorted[pos - 1];
                const double hi = sorted[pos];
                if (lo == hi) continue;
                const double c = 0.5 * (lo + hi);
                if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
            }
        }
        for (std::size_t i = 0; i < rows.size(); ++i)
            b.bins[f][i] = static_cast<std::uint16_t>(std::lower_bound(cuts.begin(), cuts.end(), vals[i]) - cuts.begin());
    }
    return b;
}

struct TreeBuilderState {
    const Binned& binned;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    const PriorConfig& cfg;
    std::vector<TreeNode> nodes;

    double leaf_value(const std::vector<std::size_t>& idx) const {
        double g = 0, h = 0;
        for (auto i : idx) {
            g += grad[i];
            h += hess[i];
        }
        return -g / (h + cfg.leaf_l2) * cfg.shrinkage;
    }

    int grow(const std::vector<std::size_t>& idx, int depth) {
        const int id = static_cast<int>(nodes.size());
        nodes.push_back({});
        double G = 0, H = 0;
        for (auto i : idx) {
            G += grad[i];
            H += hess[i];
        }
        int best_f = -1;
        std::size_t best_bin = 0;
        double best_gain = 1e-12;
        if (depth < cfg.max_depth && idx.size() >= 2) {
            const double parent = G * G / (H + cfg.leaf_l2);
            for (std::size_t f = 0; f < D; ++f) {
                const auto& cuts = binned.thresholds[f];
                if (cuts.empty()) continue;
                std::vector<double> hg(cuts.size() + 1, 0.0), hh(cuts.size() + 1, 0.0);
                for (auto i : idx) {
                    hg[binned.bins[f][i]] += grad[i];
                    hh[binned.bins[f][i]] += hess[i];
                }
                double gl = 0, hl = 0;
                for (std::size_t k = 0; k < cuts.size(); ++k) {
                    gl += hg[k];
                    hl += hh[k];
                    const double gr = G - gl, hr = H - hl;
                    if (hl < cfg.min_child_hessian || hr < cfg.min_child_hessian) continue;
                    const double gain = gl * gl / (hl + cfg.leaf_l2) + gr * gr / (hr + cfg.leaf_l2) - parent;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_f = static_cast<int>(f);
                        best_bin = k;
                    }
                }
            }
        }
        if (best_f < 0) {
            nodes[id].value = -G / (H + cfg.leaf_l2) * cfg.shrinkage;
            return id;
        }
        std::vector<std::size_t> left, right;
        for (auto i : idx) (binned.bins[best_f][i] <= best_bin ? left : right).push_back(i);
        if (left.empty() || right.empty()) {
            nodes[id].value = -G / (H + cfg.leaf_l2) * cfg.shrinkage;
            return id;
        }
        nodes[id].feature = best_f;
        nodes[id].threshold = binned.thresholds[best_f][best_bin];
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }
};

double eval_tree(const std::vector<TreeNode>& t, const FeatureRow& x) {
    int i = 0;
    while (t[i].feature >= 0) i = x[t[i].feature] <= t[i].threshold ? t[i].left : t[i].right;
    return t[i].value;
}

json tree_to_json(const std::vector<TreeNode>& t) {
    json arr = json::array();
    for (const auto& n : t) {
        if (n.feature < 0)
            arr.push_back({{"v", n.value}});
        else
            arr.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
    }
    return arr;
}

std::vector<TreeNode> tree_from_json(const json& arr) {
    std::vector<TreeNode> t;
    for (const auto& n : arr) {
        TreeNode node;
        if (n.contains("v")) {
            node.value = n.at("v").get<double>();
        } else {
            node.feature = n.at("f").get<int>();
            node.threshold = n.at("t").get<double>();
            node.left = n.at("l").get<int>();
            node.right = n.at("r").get<int>();
        }
        t.push_back(node);
    }
    const int n = static_cast<int>(t.size());
    if (n == 0) fail(ErrorCode::Format, "prior model: empty tree");
    for (const auto& node : t) {
        if (node.feature >= static_cast<int>(D) || (node.feature >= 0 && (node.left <= 0 || node.left >= n ||
                                                                           node.right <= 0 || node.right >= n)))
            fail(ErrorCode::Format, "prior model: malformed tree node");
    }
    return t;
}

}  // namespace

PriorModel PriorModel::zero_softmax() {
    PriorModel m;
    m.kind_ = ModelKind::SoftmaxRegression;
    m.feature_order_ = canonical_feature_order();
    m.scale_.fill(1.0);
    m.config_ = PriorConfig{ModelKind::SoftmaxRegression}.to_json();
    return m;
}

PriorModel fit_prior(const std::vector<TrainingRow>& rows, const PriorConfig& config) {
    validate_rows(rows);
    PriorModel m;
    m.kind_ = config.kind;
    m.feature_order_ = canonical_feature_order();
    m.config_ = config.to_json();
    const std::size_t n = rows.size();

    if (config.kind == ModelKind::Gbdt) {
        if (config.max_bins < 2 || config.max_bins > 256)
            fail(ErrorCode::InvalidArgument, "gbdt max_bins must be in [2, 256]");
        std::array<double, kNumClasses> counts{};
        for (const auto& r : rows) counts[static_cast<std::size_t>(r.label)] += 1.0;
        for (int k = 0; k < kNumClasses; ++k)
            m.init_scores_[k] = std::log((counts[k] + 1.0) / (static_cast<double>(n) + kNumClasses));

        const Binned binned = quantize(rows, config.max_bins);
        std::vector<std::array<double, kNumClasses>> scores(n, m.init_scores_);
        std::vector<double> grad(n), hess(n);
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        for (int round = 0; round < config.rounds; ++round) {
            std::vector<std::array<double, kNumClasses>> probs = scores;
            for (auto& p : probs) softmax_inplace(p);
            for (int k = 0; k < kNumClasses; ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = probs[i][k];
                    grad[i] = p - (rows[i].label == k ? 1.0 : 0.0);
                    hess[i] = std::max(p * (1.0 - p), 1e-16);
                }
                TreeBuilderState b{binned, grad, hess, config, {}};
                b.grow(all, 0);
                for (std::size_t i = 0; i < n; ++i) scores[i][k] += eval_tree(b.nodes, rows[i].x);
                m.trees_.push_back(std::move(b.nodes));
            }
        }
        return m;
    }

    // Multinomial logistic regression, full-batch gradient descent on
    // standardized features.
    for (std::size_t f = 0; f < D; ++f) {
        double mean = 0;
        for (const auto& r : rows) mean += r.x[f];
        mean /= static_cast<double>(n);
        double var = 0;
        for (const auto& r : rows) var += (r.x[f] - mean) * (r.x[f] - mean);
        var /= static_cast<double>(n);
        m.mean_[f] = mean;
        m.scale_[f] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    std::vector<FeatureRow> z(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < D; ++f) z[i][f] = (rows[i].x[f] - m.mean_[f]) * m.scale_[f];

    for (int it = 0; it < config.iterations; ++it) {
        std::array<FeatureRow, kNumClasses> gw{};
        std::array<double, kNumClasses> gb{};
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, kNumClasses> logits;
            for (int k = 0; k < kNumClasses; ++k) {
                double s = m.bias_[k];
                for (std::size_t f = 0; f < D; ++f) s += m.weights_[k][f] * z[i][f];
                logits[k] = s;
            }
            softmax_inplace(logits);
            for (int k = 0; k < kNumClasses; ++k) {
                const double d = logits[k] - (rows[i].label == k ? 1.0 : 0.0);
                gb[k] += d;
                for (std::size_t f = 0; f < D; ++f) gw[k][f] += d * z[i][f];
            }
        }
        const double inv = 1.0 / static_cast<double>(n);
        for (int k = 0; k < kNumClasses; ++k) {
            m.bias_[k] -= config.learning_rate * gb[k] * inv;
            for (std::size_t f = 0; f < D; ++f)
                m.weights_[k][f] -= config.learning_rate * (gw[k][f] * inv + config.l2 * m.weights_[k][f]);
        }
    }
    return m;
}

PriorVector predict_prior(const PriorModel& m, const FeatureRow& x) {
    if (m.feature_order_ != canonical_feature_order())
        fail(ErrorCode::InvalidArgument, "prior model feature_order does not match the lexical vector layout");
    for (std::size_t f = 0; f < D; ++f)
        if (!std::isfinite(x[f]))
            fail(ErrorCode::Numeric, "predict_prior: non-finite feature '" + std::string(lexical::kLexicalFieldOrder[f]) + "'");
    PriorVector out{};
    if (m.kind_ == ModelKind::Gbdt) {
        out = m.init_scores_;
        for (std::size_t t = 0; t < m.trees_.size(); ++t) out[t % kNumClasses] += eval_tree(m.trees_[t], x);
    } else {
        for (int k = 0; k < kNumClasses; ++k) {
            double s = m.bias_[k];
            for (std::size_t f = 0; f < D; ++f) s += m.weights_[k][f] * (x[f] - m.mean_[f]) * m.scale_[f];
            out[k] = s;
        }
    }
    softmax_inplace(out);
    return out;
}

json PriorModel::to_json() const {
    json j = {{"format", "clonefuse-prior"},
              {"version", version_},
              {"kind", model_kind_name(kind_)},
              {"feature_order", feature_order_},
              {"num_classes", kNumClasses},
              {"config", config_}};
    if (kind_ == ModelKind::Gbdt) {
        j["init_scores"] = init_scores_;
        json trees = json::array();
        for (const auto& t : trees_) trees.push_back(tree_to_json(t));
        j["trees"] = std::move(trees);
    } else {
        j["mean"] = mean_;
        j["scale"] = scale_;
        j["weights"] = weights_;
        j["bias"] = bias_;
    }
    return j;
}

PriorModel PriorModel::from_json(const json& j) {
    PriorModel m;
    try {
        if (j.at("format").get<std::string>() != "clonefuse-prior")
            fail(ErrorCode::Format, "not a prior model file");
        m.version_ = j.at("version").get<int>();
        if (m.version_ != kVersion)
            fail(ErrorCode::Format, "unsupported prior model version " + std::to_string(m.version_));
        if (j.at("num_classes").get<int>() != kNumClasses) fail(ErrorCode::Format, "prior model: class count");
        m.kind_ = parse_model_kind(j.at("kind").get<std::string>());
        m.feature_order_ = j.at("feature_order").get<std::vector<std::string>>();
        m.config_ = j.value("config", json::object());
        if (m.kind_ == ModelKind::Gbdt) {
            m.init_scores_ = j.at("init_scores").get<std::array<double, kNumClasses>>();
            for (const auto& t : j.at("trees")) m.trees_.push_back(tree_from_json(t));
            if (m.trees_.size() % kNumClasses != 0) fail(ErrorCode::Format, "prior model: tree count");
        } else {
            m.mean_ = j.at("mean").get<FeatureRow>();
            m.scale_ = j.at("scale").get<FeatureRow>();
            m.weights_ = j.at("weights").get<std::array<FeatureRow, kNumClasses>>();
            m.bias_ = j.at("bias").get<std::array<double, kNumClasses>>();
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, std::string("prior model: ") + e.what());
    }
    return m;
}

}  // namespace clonefuse::prior
