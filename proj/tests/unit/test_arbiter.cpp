#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>

#include "core/arbiter.hpp"

using namespace clonefuse;
using namespace clonefuse::arbiter;

namespace {

ProbabilityDistribution dist(const ClassVector& p) { return ProbabilityDistribution::from_probs(p); }

// argmax 5 with the given confidence, rest spread over labels 4 and 6.
ProbabilityDistribution label5(double conf) {
    const double rest = 1.0 - conf;
    return dist({0, 0, 0, 0, rest * 0.6, conf, rest * 0.4});
}

json verdict(int pred, double conf = 0.8) {
    json probs = json::array();
    for (int k = 0; k < 7; ++k) probs.push_back(k == pred ? 1.0 : 0.0);
    return {{"mode", "DeepSeek"}, {"thought", "t"}, {"prediction", pred}, {"confidence", conf},
            {"explanation", "e"}, {"probabilities", probs}};
}

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

const std::string kLeft = "int a() { return 1; }";
const std::string kRight = "int b() { return 2; }";

}  // namespace

TEST_CASE("trigger examples") {
    TriggerPolicy pol;
    CHECK(should_trigger(label5(0.55), pol));
    CHECK_FALSE(should_trigger(label5(0.9), pol));
    CHECK_FALSE(should_trigger(dist({0, 0, 0, 0, 0, 0.45, 0.55}), pol));
    // tau is a strict bound
    CHECK_FALSE(should_trigger(label5(0.6), pol));

    pol.mode = TriggerMode::Off;
    CHECK_FALSE(should_trigger(label5(0.3), pol));
    // skipped labels never trigger, even under the all-labels policy
    pol.mode = TriggerMode::AllLowConfidence;
    CHECK_FALSE(should_trigger(dist({0.4, 0.3, 0.3, 0, 0, 0, 0}), pol));
    CHECK(should_trigger(dist({0, 0.3, 0.4, 0.3, 0, 0, 0}), pol));
}

TEST_CASE("policies nest: label5 within labels2345 within all") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0, 1);
    const TriggerPolicy p5{0.6, TriggerMode::Label5Only, {0, 1, 6}};
    const TriggerPolicy p2345{0.6, TriggerMode::Labels2345, {0, 1, 6}};
    const TriggerPolicy pall{0.6, TriggerMode::AllLowConfidence, {0, 1, 6}};
    int fired5 = 0, fired_all = 0;
    for (int i = 0; i < 5000; ++i) {
        ClassVector p{};
        double s = 0;
        for (auto& v : p) s += (v = std::pow(u(g), 3));
        for (auto& v : p) v /= s;
        const auto d = dist(p);
        const bool a = should_trigger(d, p5), b = should_trigger(d, p2345), c = should_trigger(d, pall);
        if (a) CHECK(b);
        if (b) CHECK(c);
        fired5 += a;
        fired_all += c;
    }
    CHECK(fired5 > 0);
    CHECK(fired_all > fired5);
}

TEST_CASE("policy parsing and validation") {
    CHECK(parse_trigger_mode("label5") == TriggerMode::Label5Only);
    CHECK(parse_trigger_mode("all") == TriggerMode::AllLowConfidence);
    CHECK(parse_trigger_mode("labels2345") == TriggerMode::Labels2345);
    CHECK_THROWS_AS(parse_trigger_mode("some"), Error);
    TriggerPolicy bad;
    bad.tau = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.tau = 0.5;
    bad.skip_labels = {7};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("guided prompt carries exactly the top-3 lines") {
    const auto p = dist({0.01, 0.02, 0.02, 0.03, 0.33, 0.41, 0.18});
    const auto prompt = build_prompt(kLeft, kRight, p, true);
    CHECK(count(prompt, "5: 0.410\n") == 1);
    CHECK(count(prompt, "4: 0.330\n") == 1);
    CHECK(count(prompt, "6: 0.180\n") == 1);
    CHECK(prompt.find("5: 0.410\n4: 0.330\n6: 0.180\n") != std::string::npos);
    CHECK(prompt.find("3: 0.030") == std::string::npos);
    CHECK(prompt.find(kLeft) < prompt.find(kRight));
    CHECK(prompt.find("\"mode\": \"DeepSeek\"") != std::string::npos);

    const auto plain = build_prompt(kLeft, kRight, p, false);
    CHECK(plain.find("0.410") == std::string::npos);
    CHECK(plain.find("Top-3") == std::string::npos);
    CHECK(plain.find("LLM-only mode") != std::string::npos);

    CHECK_THROWS_AS(build_prompt("", kRight, p, true), Error);
    CHECK_THROWS_AS(build_prompt(kLeft, "", p, false), Error);
}

TEST_CASE("truncation counts code points") {
    const std::string longer(10000, 'x');
    const auto cut = truncate_code(longer);
    CHECK(cut == std::string(4000, 'x') + std::string(kTruncationMarker));
    CHECK(truncate_code(std::string(4000, 'y')) == std::string(4000, 'y'));

    // two-byte code points must not be split
    std::string accents;
    for (int i = 0; i < 10; ++i) accents += "\xc3\xa9";
    CHECK(truncate_code(accents, 3) == "\xc3\xa9\xc3\xa9\xc3\xa9" + std::string(kTruncationMarker));

    const auto prompt = build_prompt(longer, kRight, label5(0.5), true);
    CHECK(count(prompt, std::string(kTruncationMarker)) == 1);
    CHECK(prompt.find(std::string(4001, 'x')) == std::string::npos);
}

TEST_CASE("verdict schema") {
    CHECK(parse_verdict(verdict(3)).prediction == 3);

    auto j = verdict(3);
    j["prediction"] = 9;
    CHECK_THROWS_WITH_AS(parse_verdict(j), doctest::Contains("prediction"), Error);
    j = verdict(3);
    j["prediction"] = 3.5;
    CHECK_THROWS_AS(parse_verdict(j), Error);
    j = verdict(3);
    j["confidence"] = 1.5;
    CHECK_THROWS_WITH_AS(parse_verdict(j), doctest::Contains("confidence"), Error);
    j = verdict(3);
    j["probabilities"] = {0.5, 0.5, 0.5, 0, 0, 0, 0};
    CHECK_THROWS_WITH_AS(parse_verdict(j), doctest::Contains("sum"), Error);
    j = verdict(3);
    j["probabilities"] = {0.5, 0.5};
    CHECK_THROWS_AS(parse_verdict(j), Error);

    // slack of 1e-3 on the sum
    j = verdict(3);
    j["probabilities"][3] = 0.9995;
    CHECK_NOTHROW(parse_verdict(j));

    const auto text = "Sure! Here is {not json} and then " + verdict(2).dump() + " trailing {";
    CHECK(parse_verdict_text(text).prediction == 2);
    CHECK(first_json_object(R"(x {"a": "}{"} y)")->at("a") == "}{");
    CHECK_FALSE(first_json_object("no braces").has_value());
}

TEST_CASE("retry with repair, then give up") {
    MockTransport mock(json{{"p1", json::array({"garbage", verdict(4).dump()})},
                            {"p2", json::array({"a", "b", "c", verdict(4).dump()})},
                            {"p3", {{"transport_error", "connection refused"}}}});
    CHECK(call_arbiter("p1", "prompt", mock, 2).prediction == 4);
    CHECK(mock.calls() == 2);

    CHECK_THROWS_AS(call_arbiter("p2", "prompt", mock, 2), Error);
    CHECK(mock.calls() == 5);

    try {
        call_arbiter("p3", "prompt", mock, 2);
        FAIL("expected transport error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Transport);
    }
    CHECK(mock.calls() == 6);  // no retry on transport failure
}

TEST_CASE("decide falls back with a reason") {
    TriggerPolicy pol;
    MockTransport mock(json{{"ok", verdict(3)},
                            {"bad", json::array({verdict(9), verdict(9), verdict(9)})},
                            {"down", {{"transport_error", "timeout"}}}});
    const auto p = label5(0.5);

    auto d = decide({"ok", kLeft, kRight, p}, pol, &mock);
    CHECK(d.triggered);
    CHECK(d.arbitrated);
    CHECK(d.final_prediction == 3);
    CHECK_FALSE(d.fallback_reason.has_value());

    d = decide({"bad", kLeft, kRight, p}, pol, &mock);
    CHECK(d.final_prediction == 5);
    REQUIRE(d.fallback_reason.has_value());
    CHECK(d.fallback_reason->find("schema") != std::string::npos);

    d = decide({"down", kLeft, kRight, p}, pol, &mock);
    CHECK(d.final_prediction == 5);
    REQUIRE(d.fallback_reason.has_value());
    CHECK(d.fallback_reason->find("transport") != std::string::npos);

    d = decide({"missing-code", "", kRight, p}, pol, &mock);
    CHECK(d.final_prediction == 5);
    CHECK(d.fallback_reason.has_value());

    d = decide({"untriggered", kLeft, kRight, label5(0.9)}, pol, nullptr);
    CHECK_FALSE(d.triggered);
    CHECK_FALSE(d.arbitrated);
    CHECK(d.final_prediction == 5);

    const auto row = d.log_row();
    CHECK(row.size() == 7);
    for (const char* k : {"pair_id", "primary", "confidence", "triggered", "final", "fallback_reason", "latency_ms"})
        CHECK(row.contains(k));
    CHECK(row["fallback_reason"].is_null());
}

TEST_CASE("decide_all keeps input order and contains failures") {
    json table = json::object();
    std::vector<ArbitrationRequest> reqs;
    for (int i = 0; i < 60; ++i) {
        const auto id = "q" + std::to_string(i);
        if (i % 7 == 3) table[id] = {{"transport_error", "boom"}};
        else table[id] = verdict(i % 5 + 2);
        reqs.push_back({id, kLeft, kRight, label5(i % 2 ? 0.5 : 0.95)});
    }
    MockTransport mock(table);
    const auto out = decide_all(reqs, TriggerPolicy{}, &mock, 8);
    REQUIRE(out.size() == reqs.size());
    std::size_t triggered = 0;
    for (int i = 0; i < 60; ++i) {
        const auto& d = out[std::size_t(i)];
        CHECK(d.pair_id == reqs[std::size_t(i)].pair_id);
        if (i % 2 == 0) {
            CHECK_FALSE(d.triggered);
            CHECK(d.final_prediction == 5);
            continue;
        }
        ++triggered;
        if (i % 7 == 3) {
            CHECK(d.fallback_reason.has_value());
            CHECK(d.final_prediction == 5);
        } else {
            CHECK(d.final_prediction == i % 5 + 2);
        }
    }
    CHECK(mock.calls() == triggered);
}

TEST_CASE("http transport against a local server") {
    httplib::Server srv;
    std::atomic<int> hits{0};
    std::string seen_auth, seen_body;
    std::mutex mu;
    srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        {
            std::lock_guard<std::mutex> lock(mu);
            seen_auth = req.get_header_value("Authorization");
            seen_body = req.body;
        }
        const int n = ++hits;
        const std::string content = n == 1 ? "no json here" : verdict(2).dump();
        res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                        "application/json");
    });
    srv.Post("/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    const int port = srv.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    ::setenv("CF_TEST_ARBITER_KEY", "sekret", 1);
    EndpointConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.credential_env = "CF_TEST_ARBITER_KEY";
    cfg.requests_per_minute = 0;
    cfg.timeout_seconds = 5;
    CHECK(cfg.to_json().dump().find("sekret") == std::string::npos);
    {
        HttpTransport http(cfg);
        const auto v = call_arbiter("h1", "hello", http, 2);
        CHECK(v.prediction == 2);
        CHECK(hits == 2);
        std::lock_guard<std::mutex> lock(mu);
        CHECK(seen_auth == "Bearer sekret");
        const auto body = json::parse(seen_body);
        CHECK(body["messages"].size() == 3);  // prompt, bad reply, repair
        CHECK(body["messages"][2]["content"] == std::string(kRepairInstruction));
        CHECK(body["temperature"] == 0);
    }
    {
        auto bad = cfg;
        bad.url = "http://127.0.0.1:" + std::to_string(port) + "/fail";
        HttpTransport http(bad);
        try {
            http.complete("h2", {{"user", "x"}});
            FAIL("expected transport error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Transport);
            CHECK(std::string(e.what()).find("503") != std::string::npos);
        }
    }
    srv.stop();
    th.join();
    CHECK_THROWS_AS(HttpTransport(EndpointConfig{}), Error);
}
