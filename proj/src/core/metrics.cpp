#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clonefuse::metrics {

namespace {

void check_label(int y, const char* what, std::size_t i) {
    if (y < 0 || y >= kNumClasses)
        fail(ErrorCode::InvalidArgument, std::string(what) + "[" + std::to_string(i) + "] = " + std::to_string(y) +
                                             " is not a label in 0..6");
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

PrfResult from_confusion(const Confusion& c, std::size_t n) {
    PrfResult r;
    r.n = n;
    r.confusion = c;
    std::size_t correct = 0;
    for (int k = 0; k < kNumClasses; ++k) {
        std::size_t tp = c[k][k], row = 0, col = 0;
        for (int j = 0; j < kNumClasses; ++j) {
            row += c[k][j];
            col += c[j][k];
        }
        auto& s = r.per_class[k];
        s.support = row;
        s.precision = ratio(tp, col);
        s.recall = ratio(tp, row);
        s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        correct += tp;
    }
    r.accuracy = ratio(correct, n);
    for (const auto& s : r.per_class) {
        r.macro_precision += s.precision;
        r.macro_recall += s.recall;
        r.macro_f1 += s.f1;
        if (n > 0) {
            double w = static_cast<double>(s.support) / static_cast<double>(n);
            r.weighted_precision += w * s.precision;
            r.weighted_recall += w * s.recall;
            r.weighted_f1 += w * s.f1;
        }
    }
    r.macro_precision /= kNumClasses;
    r.macro_recall /= kNumClasses;
    r.macro_f1 /= kNumClasses;
    return r;
}

json interval_json(const Interval& i) { return json::array({i.low, i.high}); }

}  // namespace

json PrfResult::to_json() const {
    json per = json::object();
    for (int k = 0; k < kNumClasses; ++k) {
        const auto& s = per_class[k];
        per[std::to_string(k)] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
    }
    json conf = json::array();
    for (const auto& row : confusion) conf.push_back(row);
    return {
        {"n", n},
        {"accuracy", accuracy},
        {"confusion", conf},
        {"per_class", per},
        {"macro", {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}}},
        {"weighted", {{"precision", weighted_precision}, {"recall", weighted_recall}, {"f1", weighted_f1}}},
    };
}

PrfResult confusion_and_prf(const std::vector<int>& truths, const std::vector<int>& preds) {
    if (truths.size() != preds.size())
        fail(ErrorCode::InvalidArgument, "length mismatch: " + std::to_string(truths.size()) + " truths vs " +
                                             std::to_string(preds.size()) + " predictions");
    Confusion c{};
    for (std::size_t i = 0; i < truths.size(); ++i) {
        check_label(truths[i], "truths", i);
        check_label(preds[i], "preds", i);
        ++c[truths[i]][preds[i]];
    }
    return from_confusion(c, truths.size());
}

double macro_f1(const std::vector<int>& truths, const std::vector<int>& preds) {
    return confusion_and_prf(truths, preds).macro_f1;
}

std::vector<int> topk_labels(const ClassVector& p, int k) {
    if (k < 1 || k > kNumClasses) fail(ErrorCode::InvalidArgument, "k must be in 1..7, got " + std::to_string(k));
    std::vector<int> order(kNumClasses);
    for (int i = 0; i < kNumClasses; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

double topk_coverage(const std::vector<int>& truths, const std::vector<ClassVector>& distributions, int k) {
    if (truths.size() != distributions.size())
        fail(ErrorCode::InvalidArgument, "length mismatch between truths and distributions");
    if (k < 1 || k > kNumClasses) fail(ErrorCode::InvalidArgument, "k must be in 1..7, got " + std::to_string(k));
    if (truths.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        check_label(truths[i], "truths", i);
        auto top = topk_labels(distributions[i], k);
        if (std::find(top.begin(), top.end(), truths[i]) != top.end()) ++hit;
    }
    return ratio(hit, truths.size());
}

Interval bootstrap_ci(const std::vector<int>& truths, const std::vector<int>& preds, std::size_t resamples,
                      std::uint64_t seed) {
    if (truths.size() != preds.size()) fail(ErrorCode::InvalidArgument, "length mismatch in bootstrap_ci");
    if (truths.size() < 2) fail(ErrorCode::InvalidArgument, "bootstrap_ci needs at least 2 samples");
    if (resamples == 0) fail(ErrorCode::InvalidArgument, "bootstrap_ci needs at least one resample");
    for (std::size_t i = 0; i < truths.size(); ++i) {
        check_label(truths[i], "truths", i);
        check_label(preds[i], "preds", i);
    }
    Rng rng(mix64(seed ^ 0xb0075712ULL));
    const std::size_t n = truths.size();
    std::vector<double> stats;
    stats.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        Confusion c{};
        for (std::size_t i = 0; i < n; ++i) {
            auto j = static_cast<std::size_t>(rng.uniform_index(n));
            ++c[truths[j]][preds[j]];
        }
        stats.push_back(from_confusion(c, n).macro_f1);
    }
    std::sort(stats.begin(), stats.end());
    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(stats.size() - 1);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        auto hi = std::min(lo + 1, stats.size() - 1);
        double frac = pos - static_cast<double>(lo);
        // equal neighbours give the value back exactly
        if (stats[lo] == stats[hi]) return stats[lo];
        return stats[lo] + frac * (stats[hi] - stats[lo]);
    };
    return {quantile(0.025), quantile(0.975)};
}

static void check_edges(const std::vector<double>& edges) {
    if (edges.size() < 2) fail(ErrorCode::InvalidArgument, "need at least two bin edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) fail(ErrorCode::InvalidArgument, "bin edges must be strictly increasing");
    if (edges.front() > 0.0 || edges.back() < 1.0) fail(ErrorCode::InvalidArgument, "bin edges must cover [0, 1]");
}

std::vector<ConfidenceBin> confidence_bin_report(const std::vector<int>& truths,
                                                 const std::vector<ClassVector>& distributions,
                                                 const std::vector<double>& edges) {
    if (truths.size() != distributions.size())
        fail(ErrorCode::InvalidArgument, "length mismatch between truths and distributions");
    check_edges(edges);

    const std::size_t nb = edges.size() - 1;
    std::vector<std::vector<int>> bt(nb), bp(nb);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        check_label(truths[i], "truths", i);
        const auto& p = distributions[i];
        double conf = *std::max_element(p.begin(), p.end());
        std::size_t b = nb;
        for (std::size_t k = 0; k < nb; ++k) {
            bool last = k + 1 == nb;
            if (conf >= edges[k] && (conf < edges[k + 1] || (last && conf <= edges[k + 1]))) {
                b = k;
                break;
            }
        }
        if (b == nb) fail(ErrorCode::InvalidArgument, "confidence outside the bin edges at sample " + std::to_string(i));
        bt[b].push_back(truths[i]);
        bp[b].push_back(argmax(p));
    }
    std::vector<ConfidenceBin> out;
    for (std::size_t k = 0; k < nb; ++k) {
        ConfidenceBin bin;
        bin.low = edges[k];
        bin.high = edges[k + 1];
        bin.count = bt[k].size();
        if (bin.count > 0) {
            auto r = confusion_and_prf(bt[k], bp[k]);
            bin.accuracy = r.accuracy;
            bin.macro_f1 = r.macro_f1;
            bin.weighted_f1 = r.weighted_f1;
        }
        out.push_back(bin);
    }
    return out;
}

std::vector<double> parse_bin_edges(const std::string& text) {
    std::vector<double> edges;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            double v = std::stod(item, &used);
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
            edges.push_back(v);
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidArgument, "bad bin edge '" + item + "'");
        }
    }
    check_edges(edges);
    return edges;
}

PolicyRow PolicyRow::from(const PrfResult& r) {
    PolicyRow p;
    p.accuracy = r.accuracy;
    p.macro_precision = r.macro_precision;
    p.macro_recall = r.macro_recall;
    p.macro_f1 = r.macro_f1;
    p.weighted_precision = r.weighted_precision;
    p.weighted_recall = r.weighted_recall;
    p.weighted_f1 = r.weighted_f1;
    return p;
}

json PolicyRow::to_json() const {
    return {{"accuracy", accuracy},
            {"macro_precision", macro_precision},
            {"macro_recall", macro_recall},
            {"macro_f1", macro_f1},
            {"weighted_precision", weighted_precision},
            {"weighted_recall", weighted_recall},
            {"weighted_f1", weighted_f1}};
}

json PolicyComparison::to_json() const {
    return {{"base", base.to_json()}, {"arbitrated", arbitrated.to_json()}, {"delta", delta.to_json()},
            {"changed", changed}};
}

PolicyComparison compare_policies(const std::map<std::string, int>& truths, const std::map<std::string, int>& base,
                                  const std::map<std::string, int>& arbitrated) {
    if (base.size() != arbitrated.size()) fail(ErrorCode::InvalidArgument, "decision sets differ in size");
    std::vector<int> t, b, a;
    PolicyComparison out;
    for (const auto& [id, pred] : base) {
        auto it = arbitrated.find(id);
        if (it == arbitrated.end()) fail(ErrorCode::InvalidArgument, "pair " + id + " missing from arbitrated decisions");
        auto tt = truths.find(id);
        if (tt == truths.end()) fail(ErrorCode::NotFound, "no truth label for pair " + id);
        t.push_back(tt->second);
        b.push_back(pred);
        a.push_back(it->second);
        if (pred != it->second) ++out.changed;
    }
    out.base = PolicyRow::from(confusion_and_prf(t, b));
    out.arbitrated = PolicyRow::from(confusion_and_prf(t, a));
    const auto& x = out.base;
    const auto& y = out.arbitrated;
    out.delta.accuracy = y.accuracy - x.accuracy;
    out.delta.macro_precision = y.macro_precision - x.macro_precision;
    out.delta.macro_recall = y.macro_recall - x.macro_recall;
    out.delta.macro_f1 = y.macro_f1 - x.macro_f1;
    out.delta.weighted_precision = y.weighted_precision - x.weighted_precision;
    out.delta.weighted_recall = y.weighted_recall - x.weighted_recall;
    out.delta.weighted_f1 = y.weighted_f1 - x.weighted_f1;
    return out;
}

json EvalReport::to_json() const {
    json j = prf.to_json();
    json tk = json::object();
    for (const auto& [k, v] : topk) tk[std::to_string(k)] = v;
    j["topk_coverage"] = tk;
    j["ci_95"] = interval_json(ci_95);
    json bins = json::array();
    for (const auto& b : confidence_bins)
        bins.push_back({{"range", json::array({b.low, b.high})},
                        {"count", b.count},
                        {"accuracy", b.accuracy},
                        {"macro_f1", b.macro_f1},
                        {"weighted_f1", b.weighted_f1}});
    j["confidence_bins"] = bins;
    j["arbitration_fraction"] = arbitration_fraction ? json(*arbitration_fraction) : json(nullptr);
    if (comparison) j["policy_comparison"] = comparison->to_json();
    return j;
}

std::string confusion_csv(const Confusion& c) {
    std::string out = "truth";
    for (int k = 0; k < kNumClasses; ++k) out += ",pred_" + std::to_string(k);
    out += "\n";
    for (int r = 0; r < kNumClasses; ++r) {
        out += std::to_string(r);
        for (int k = 0; k < kNumClasses; ++k) out += "," + std::to_string(c[r][k]);
        out += "\n";
    }
    return out;
}

}  // namespace clonefuse::metrics
