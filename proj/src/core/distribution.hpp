#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "core/common.hpp"

namespace clonefuse {

using ClassVector = std::array<double, kNumClasses>;

// 7-way class distribution with derived confidence and top-3 (ties resolve
// to the lower label).
struct ProbabilityDistribution {
    ClassVector p{};
    double confidence = 0;
    std::array<std::pair<int, double>, 3> top3{};

    static ProbabilityDistribution from_probs(const ClassVector& probs) {
        ProbabilityDistribution d;
        d.p = probs;
        std::array<int, kNumClasses> order{};
        for (int k = 0; k < kNumClasses; ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
        for (int k = 0; k < 3; ++k) d.top3[k] = {order[k], probs[order[k]]};
        d.confidence = probs[order[0]];
        return d;
    }

    int argmax() const { return top3[0].first; }

    bool on_simplex(double tol) const {
        double s = 0;
        for (double v : p) {
            if (!(v >= -tol && v <= 1.0 + tol)) return false;
            s += v;
        }
        return std::abs(s - 1.0) <= tol;
    }
};

// Numerically stable softmax.
inline ClassVector softmax(const ClassVector& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    ClassVector out{};
    double sum = 0;
    for (int k = 0; k < kNumClasses; ++k) {
        out[k] = std::exp(z[k] - mx);
        sum += out[k];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Lowest index among equal maxima.
inline int argmax(const ClassVector& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace clonefuse
