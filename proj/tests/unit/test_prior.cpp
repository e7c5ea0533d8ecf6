#include <doctest.h>

#include <random>

#include "core/distribution.hpp"
#include "core/prior.hpp"

using namespace clonefuse;
using namespace clonefuse::prior;

namespace {

// Labels 0/6 split by the jaccard feature alone, with a margin around 0.5.
std::vector<TrainingRow> jaccard_toy(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TrainingRow> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = rows[i];
        for (auto& v : r.x) v = u(g);
        const bool high = i % 2 == 0;
        r.x[0] = high ? 0.55 + 0.45 * u(g) : 0.45 * u(g);
        r.label = high ? 6 : 0;
        r.pair_id = "t" + std::to_string(i);
    }
    return rows;
}

double train_accuracy(const PriorModel& m, const std::vector<TrainingRow>& rows) {
    std::size_t ok = 0;
    for (const auto& r : rows) ok += argmax(predict_prior(m, r.x)) == r.label ? 1 : 0;
    return double(ok) / double(rows.size());
}

bool on_simplex(const PriorVector& p) {
    double s = 0;
    for (double v : p) {
        if (v < 0 || v > 1) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= 1e-6;
}

}  // namespace

TEST_CASE("both model kinds separate the jaccard toy set") {
    const auto rows = jaccard_toy(400, 1);
    const auto held = jaccard_toy(200, 2);
    for (auto kind : {ModelKind::Gbdt, ModelKind::SoftmaxRegression}) {
        PriorConfig cfg;
        cfg.kind = kind;
        cfg.seed = 5;
        const auto m = fit_prior(rows, cfg);
        CHECK(train_accuracy(m, rows) >= 0.99);
        CHECK(train_accuracy(m, held) >= 0.95);
        for (const auto& r : held) CHECK(on_simplex(predict_prior(m, r.x)));
        CHECK(m.feature_order() == canonical_feature_order());
    }
}

TEST_CASE("degenerate and non-finite training input") {
    auto rows = jaccard_toy(20, 3);
    for (auto& r : rows) r.label = 2;
    CHECK_THROWS_AS(fit_prior(rows, PriorConfig{}), Error);

    rows = jaccard_toy(20, 3);
    rows[7].x[4] = std::nan("");
    try {
        fit_prior(rows, PriorConfig{});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Numeric);
        CHECK(std::string(e.what()).find("t7") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_model_kind("forest"), Error);
    CHECK(parse_model_kind("softmax_regression") == ModelKind::SoftmaxRegression);
}

TEST_CASE("refit is bit-identical and serialization round trips") {
    const auto rows = jaccard_toy(200, 4);
    for (auto kind : {ModelKind::Gbdt, ModelKind::SoftmaxRegression}) {
        PriorConfig cfg;
        cfg.kind = kind;
        cfg.seed = 9;
        cfg.rounds = 20;
        const auto a = fit_prior(rows, cfg);
        const auto b = fit_prior(rows, cfg);
        CHECK(dump_compact(a.to_json()) == dump_compact(b.to_json()));
        const auto back = PriorModel::from_json(json::parse(dump_compact(a.to_json())));
        for (const auto& r : rows) CHECK(predict_prior(back, r.x) == predict_prior(a, r.x));
    }
}

TEST_CASE("model file validation") {
    auto j = PriorModel::zero_softmax().to_json();
    auto wrong = j;
    wrong["version"] = 99;
    CHECK_THROWS_AS(PriorModel::from_json(wrong), Error);
    wrong = j;
    wrong["format"] = "something-else";
    CHECK_THROWS_AS(PriorModel::from_json(wrong), Error);
    wrong = j;
    wrong.erase("weights");
    CHECK_THROWS_AS(PriorModel::from_json(wrong), Error);

    auto reordered = j;
    std::swap(reordered["feature_order"][0], reordered["feature_order"][1]);
    const auto m = PriorModel::from_json(reordered);
    CHECK_THROWS_AS(predict_prior(m, FeatureRow{}), Error);
}

TEST_CASE("zero softmax regression is uniform") {
    const auto m = PriorModel::zero_softmax();
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int i = 0; i < 20; ++i) {
        FeatureRow x;
        for (auto& v : x) v = u(g);
        for (double p : predict_prior(m, x)) CHECK(p == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    }
}

TEST_CASE("gbdt clone-ish probability is monotone in jaccard") {
    const auto rows = jaccard_toy(400, 6);
    PriorConfig cfg;
    cfg.seed = 2;
    const auto m = fit_prior(rows, cfg);
    FeatureRow base;
    base.fill(0.5);
    double prev = -1;
    for (int k = 0; k <= 10; ++k) {
        base[0] = k / 10.0;
        const auto p = predict_prior(m, base);
        const double cloneish = 1.0 - p[0];
        CHECK(cloneish >= prev - 1e-12);
        prev = cloneish;
    }
}

TEST_CASE("softmax regression is consistent under class permutation") {
    std::mt19937_64 g(8);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<TrainingRow> rows(150);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (auto& v : rows[i].x) v = u(g);
        rows[i].label = int(i % 3);
        rows[i].x[0] += rows[i].label;
    }
    const std::array<int, 7> perm = {4, 0, 6, 1, 2, 5, 3};
    auto permuted = rows;
    for (auto& r : permuted) r.label = perm[std::size_t(r.label)];
    PriorConfig cfg;
    cfg.kind = ModelKind::SoftmaxRegression;
    const auto a = fit_prior(rows, cfg);
    const auto b = fit_prior(permuted, cfg);
    for (const auto& r : rows) {
        const auto pa = predict_prior(a, r.x);
        const auto pb = predict_prior(b, r.x);
        for (int c = 0; c < 7; ++c) CHECK(pb[std::size_t(perm[std::size_t(c)])] == doctest::Approx(pa[std::size_t(c)]).epsilon(1e-9));
    }
}
