#include "core/arbiter.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace clonefuse::arbiter {

const char* trigger_mode_name(TriggerMode m) {
    switch (m) {
        case TriggerMode::Off: return "off";
        case TriggerMode::AllLowConfidence: return "all_low_confidence";
        case TriggerMode::Label5Only: return "label5_only";
        case TriggerMode::Labels2345: return "labels2345";
    }
    return "?";
}

TriggerMode parse_trigger_mode(const std::string& name) {
    if (name == "off") return TriggerMode::Off;
    if (name == "all" || name == "all_low_confidence") return TriggerMode::AllLowConfidence;
    if (name == "label5" || name == "label5_only") return TriggerMode::Label5Only;
    if (name == "labels2345") return TriggerMode::Labels2345;
    fail(ErrorCode::InvalidArgument, "unknown policy '" + name + "' (expected off, all, label5 or labels2345)");
}

void TriggerPolicy::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) fail(ErrorCode::InvalidArgument, "tau must be in (0, 1)");
    for (int k : skip_labels)
        if (k < 0 || k >= kNumClasses) fail(ErrorCode::InvalidArgument, "skip label out of range");
}

json TriggerPolicy::to_json() const {
    return {{"tau", tau}, {"mode", trigger_mode_name(mode)}, {"skip_labels", skip_labels}};
}

bool should_trigger(const ProbabilityDistribution& p, const TriggerPolicy& policy) {
    if (policy.mode == TriggerMode::Off) return false;
    const int top = p.argmax();
    if (policy.skip_labels.count(top)) return false;
    if (!(p.confidence < policy.tau)) return false;
    switch (policy.mode) {
        case TriggerMode::AllLowConfidence: return true;
        case TriggerMode::Label5Only: return top == 5;
        case TriggerMode::Labels2345: return top >= 2 && top <= 5;
        case TriggerMode::Off: break;
    }
    return false;
}

std::string truncate_code(std::string_view code, std::size_t budget) {
    std::size_t cps = 0, i = 0;
    while (i < code.size()) {
        if (cps == budget) return std::string(code.substr(0, i)) + std::string(kTruncationMarker);
        const auto c = static_cast<unsigned char>(code[i]);
        i += c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
        ++cps;
    }
    return std::string(code);
}

namespace {

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string build_prompt(std::string_view code_left, std::string_view code_right, const ProbabilityDistribution& p,
                         bool guided, std::size_t char_budget) {
    if (code_left.empty() || code_right.empty()) fail(ErrorCode::InvalidArgument, "cannot build a prompt for empty code");
    std::string ref;
    if (guided) {
        if (!p.on_simplex(1e-6)) fail(ErrorCode::InvalidArgument, "prompt needs a valid probability distribution");
        ref = "Top-3 candidate labels (label: probability):\n";
        for (const auto& [label, prob] : p.top3) ref += std::to_string(label) + ": " + fixed3(prob) + "\n";
    } else {
        ref = "(not provided: LLM-only mode)\n";
    }
    std::string out;
    out += "you are an expert arbitrator in program analysis. You will determine the clone type (0-6)\n";
    out += "of the following code pair. Your task can follow two modes:\n";
    out += "DeepSeek mode:\n";
    out += "Combine code semantics with a high-performance model's prior probabilities\n";
    out += "to produce a final decision (0-6) with reasoning and confidence.\n";
    out += "LLM-only mode:\n";
    out += "Use ONLY the code content, ignoring any model predictions or probabilities.\n";
    out += "--- Code 1 ---\n";
    out += truncate_code(code_left, char_budget) + "\n";
    out += "--- Code 2 ---\n";
    out += truncate_code(code_right, char_budget) + "\n";
    out += "--- Optional Model Prior Probabilities (for DeepSeek mode) ---\n";
    out += ref;
    out += "--- BigCloneBench Labels (0-6) ---\n";
    out += "[1] Type-1: identical syntax except whitespace/comments\n";
    out += "[2] Type-2: identical syntax except identifiers/literals\n";
    out += "[3] VST3: syntactic similarity [90%, 100%)\n";
    out += "[4] ST3: syntactic similarity [70%, 90%)\n";
    out += "[5] MT3: syntactic similarity [50%, 70%)\n";
    out += "[6] WT3 / Type-4: semantic clone (<50% syntactic similarity)\n";
    out += "[0] Non-Clone: completely different logic\n";
    out += "Return STRICT JSON only:\n";
    out += "{\n";
    out += std::string("  \"mode\": \"") + (guided ? "DeepSeek" : "LLM-only") + "\",\n";
    out += "  \"thought\": \"<analysis of core code differences>\",\n";
    out += "  \"prediction\": <0-6 integer>,\n";
    out += "  \"confidence\": <0.0-1.0>,\n";
    out += "  \"explanation\": \"<key reasoning>\",\n";
    out += "  \"probabilities\": [p0,p1,p2,p3,p4,p5,p6]\n";
    out += "}\n";
    return out;
}

json ArbitrationVerdict::to_json() const {
    return {{"mode", mode},
            {"thought", thought},
            {"prediction", prediction},
            {"confidence", confidence},
            {"explanation", explanation},
            {"probabilities", probabilities}};
}

ArbitrationVerdict parse_verdict(const json& j) {
    if (!j.is_object()) fail(ErrorCode::Schema, "verdict is not a JSON object");
    ArbitrationVerdict v;
    auto text_field = [&](const char* key, std::string& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_string()) fail(ErrorCode::Schema, std::string("field '") + key + "' must be a string");
        out = j[key].get<std::string>();
    };
    text_field("mode", v.mode);
    text_field("thought", v.thought);
    text_field("explanation", v.explanation);

    if (!j.contains("prediction") || !j["prediction"].is_number_integer())
        fail(ErrorCode::Schema, "field 'prediction' must be an integer");
    const auto pred = j["prediction"].get<std::int64_t>();
    if (pred < 0 || pred >= kNumClasses)
        fail(ErrorCode::Schema, "field 'prediction' out of range: " + std::to_string(pred));
    v.prediction = static_cast<int>(pred);

    if (!j.contains("confidence") || !j["confidence"].is_number())
        fail(ErrorCode::Schema, "field 'confidence' must be a number");
    v.confidence = j["confidence"].get<double>();
    if (!(v.confidence >= 0.0 && v.confidence <= 1.0)) fail(ErrorCode::Schema, "field 'confidence' outside [0, 1]");

    if (!j.contains("probabilities") || !j["probabilities"].is_array() || j["probabilities"].size() != kNumClasses)
        fail(ErrorCode::Schema, "field 'probabilities' must be a list of 7 numbers");
    double sum = 0;
    for (int k = 0; k < kNumClasses; ++k) {
        const auto& e = j["probabilities"][k];
        if (!e.is_number()) fail(ErrorCode::Schema, "field 'probabilities' must be a list of 7 numbers");
        const double x = e.get<double>();
        if (!(x >= 0.0 && x <= 1.0)) fail(ErrorCode::Schema, "probability outside [0, 1]");
        v.probabilities[k] = x;
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-3) fail(ErrorCode::Schema, "probabilities sum to " + std::to_string(sum));
    return v;
}

std::optional<json> first_json_object(std::string_view text) {
    for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_str = false, esc = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_str) {
                if (esc) esc = false;
                else if (c == '\\') esc = true;
                else if (c == '"') in_str = false;
                continue;
            }
            if (c == '"') in_str = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) {
                auto parsed = json::parse(text.substr(start, i - start + 1), nullptr, false);
                if (!parsed.is_discarded()) return parsed;
                break;
            }
        }
    }
    return std::nullopt;
}

ArbitrationVerdict parse_verdict_text(std::string_view text) {
    auto j = first_json_object(text);
    if (!j) fail(ErrorCode::Schema, "reply contains no JSON object");
    return parse_verdict(*j);
}

ArbitrationVerdict call_arbiter(const std::string& pair_id, const std::string& prompt, Transport& transport,
                                int max_retries) {
    std::vector<ChatMessage> messages{{"user", prompt}};
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        const std::string reply = transport.complete(pair_id, messages);
        try {
            return parse_verdict_text(reply);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::Schema) throw;
            last_error = e.what();
        }
        messages.push_back({"assistant", reply});
        messages.push_back({"user", std::string(kRepairInstruction)});
    }
    fail(ErrorCode::Schema, "verdict rejected after " + std::to_string(max_retries + 1) + " attempts: " + last_error);
}

MockTransport::MockTransport(json table) : table_(std::move(table)) {
    if (!table_.is_object()) fail(ErrorCode::Format, "mock arbiter table must be a JSON object");
}

std::unique_ptr<MockTransport> MockTransport::from_file(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, path.string() + ": " + e.what());
    }
    return std::make_unique<MockTransport>(std::move(j));
}

std::string MockTransport::complete(const std::string& pair_id, const std::vector<ChatMessage>&) {
    std::size_t attempt;
    {
        std::lock_guard<std::mutex> lock(mu_);
        ++calls_;
        attempt = attempts_[pair_id]++;
    }
    auto it = table_.find(pair_id);
    if (it == table_.end()) fail(ErrorCode::Transport, "mock arbiter has no reply for pair " + pair_id);
    const json* entry = &*it;
    if (entry->is_array()) {
        if (entry->empty()) fail(ErrorCode::Transport, "mock arbiter has no reply for pair " + pair_id);
        entry = &(*entry)[std::min(attempt, entry->size() - 1)];
    }
    if (entry->is_string()) return entry->get<std::string>();
    if (entry->is_object() && entry->contains("transport_error"))
        fail(ErrorCode::Transport, (*entry)["transport_error"].dump());
    return entry->dump();
}

std::size_t MockTransport::calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
}

json EndpointConfig::to_json() const {
    return {{"url", url},
            {"model", model},
            {"credential_env", credential_env},
            {"timeout_seconds", timeout_seconds},
            {"max_retries", max_retries},
            {"max_in_flight", max_in_flight},
            {"requests_per_minute", requests_per_minute}};
}

struct HttpTransport::Impl {
    EndpointConfig config;
    std::string origin;  // scheme://host[:port]
    std::string path;
    std::string credential;

    std::mutex mu;
    std::condition_variable cv;
    std::size_t in_flight = 0;
    double tokens = 0;
    std::chrono::steady_clock::time_point refilled = std::chrono::steady_clock::now();

    void acquire() {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return in_flight < std::max<std::size_t>(1, config.max_in_flight); });
        ++in_flight;
        if (config.requests_per_minute <= 0) return;
        const double rate = config.requests_per_minute / 60.0;  // per second
        const double capacity = std::max(1.0, static_cast<double>(config.max_in_flight));
        for (;;) {
            auto now = std::chrono::steady_clock::now();
            tokens = std::min(capacity, tokens + rate * std::chrono::duration<double>(now - refilled).count());
            refilled = now;
            if (tokens >= 1.0) {
                tokens -= 1.0;
                return;
            }
            auto wait = std::chrono::duration<double>((1.0 - tokens) / rate);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mu);
            --in_flight;
        }
        cv.notify_one();
    }
};

HttpTransport::HttpTransport(EndpointConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);
    const std::string& url = impl_->config.url;
    const auto scheme_end = url.find("://");
    if (url.empty() || scheme_end == std::string::npos)
        fail(ErrorCode::InvalidArgument, "arbiter url must look like http(s)://host[:port]/path");
    const auto path_start = url.find('/', scheme_end + 3);
    impl_->origin = url.substr(0, path_start);
    impl_->path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (const char* key = std::getenv(impl_->config.credential_env.c_str())) impl_->credential = key;
    impl_->tokens = std::max(1.0, static_cast<double>(impl_->config.max_in_flight));
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::complete(const std::string& pair_id, const std::vector<ChatMessage>& messages) {
    json body;
    body["model"] = impl_->config.model;
    body["temperature"] = 0;
    body["messages"] = json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

    impl_->acquire();
    httplib::Result res;
    try {
        httplib::Client client(impl_->origin);
        client.set_connection_timeout(impl_->config.timeout_seconds, 0);
        client.set_read_timeout(impl_->config.timeout_seconds, 0);
        client.set_write_timeout(impl_->config.timeout_seconds, 0);
        httplib::Headers headers;
        if (!impl_->credential.empty()) headers.emplace("Authorization", "Bearer " + impl_->credential);
        res = client.Post(impl_->path, headers, body.dump(), "application/json");
    } catch (const std::exception& e) {
        impl_->release();
        fail(ErrorCode::Transport, "arbiter request for " + pair_id + " failed: " + e.what());
    }
    impl_->release();
    if (!res) fail(ErrorCode::Transport, "arbiter request for " + pair_id + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        fail(ErrorCode::Transport, "arbiter returned HTTP " + std::to_string(res->status) + " for " + pair_id);

    auto reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) return res->body;  // let the schema check deal with it
    try {
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        return res->body;
    }
}

json FinalDecision::log_row() const {
    return {{"pair_id", pair_id},
            {"primary", primary_prediction},
            {"confidence", confidence},
            {"triggered", triggered},
            {"final", final_prediction},
            {"fallback_reason", fallback_reason ? json(*fallback_reason) : json(nullptr)},
            {"latency_ms", latency_ms}};
}

FinalDecision decide(const ArbitrationRequest& request, const TriggerPolicy& policy, Transport* transport,
                     const DecideOptions& options) {
    FinalDecision d;
    d.pair_id = request.pair_id;
    d.primary_prediction = request.p.argmax();
    d.confidence = request.p.confidence;
    d.final_prediction = d.primary_prediction;
    d.triggered = should_trigger(request.p, policy);
    if (!d.triggered) return d;

    d.arbitrated = true;
    const auto start = std::chrono::steady_clock::now();
    try {
        if (!transport) fail(ErrorCode::Transport, "no arbiter configured");
        const auto prompt =
            build_prompt(request.code_left, request.code_right, request.p, options.guided, options.char_budget);
        d.verdict = call_arbiter(request.pair_id, prompt, *transport, options.max_retries);
        d.final_prediction = d.verdict->prediction;
    } catch (const Error& e) {
        d.fallback_reason = std::string(error_code_name(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
        d.fallback_reason = std::string("internal: ") + e.what();
    }
    d.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    return d;
}

std::vector<FinalDecision> decide_all(const std::vector<ArbitrationRequest>& requests, const TriggerPolicy& policy,
                                      Transport* transport, std::size_t max_in_flight, const DecideOptions& options) {
    policy.validate();
    std::vector<FinalDecision> out(requests.size());
    // Untriggered pairs need no worker.
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        if (should_trigger(requests[i].p, policy)) pending.push_back(i);
        else out[i] = decide(requests[i], policy, nullptr, options);
    }
    const std::size_t workers = std::min(std::max<std::size_t>(1, max_in_flight), pending.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t j; (j = next.fetch_add(1)) < pending.size();) {
            const auto i = pending[j];
            out[i] = decide(requests[i], policy, transport, options);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

}  // namespace clonefuse::arbiter
