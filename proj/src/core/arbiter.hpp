#pragma once
// Confidence-gated arbitration: when the fusion head is unsure, ask an
// external chat model for a verdict and merge it into the final decision.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "core/common.hpp"
#include "core/distribution.hpp"

namespace clonefuse::arbiter {

enum class TriggerMode { Off, AllLowConfidence, Label5Only, Labels2345 };

const char* trigger_mode_name(TriggerMode m);
// Accepts both the long names and the CLI spellings (off, all, label5, labels2345).
TriggerMode parse_trigger_mode(const std::string& name);

struct TriggerPolicy {
    double tau = 0.6;
    TriggerMode mode = TriggerMode::Label5Only;
    std::set<int> skip_labels = {0, 1, 6};

    void validate() const;
    json to_json() const;
};

bool should_trigger(const ProbabilityDistribution& p, const TriggerPolicy& policy);

inline constexpr std::size_t kDefaultCharBudget = 4000;
inline constexpr std::string_view kTruncationMarker = "\n/* ... truncated ... */";

// Cuts `code` to `budget` code points and appends the marker when it was longer.
std::string truncate_code(std::string_view code, std::size_t budget = kDefaultCharBudget);

std::string build_prompt(std::string_view code_left, std::string_view code_right, const ProbabilityDistribution& p,
                         bool guided, std::size_t char_budget = kDefaultCharBudget);

struct ArbitrationVerdict {
    std::string mode;
    std::string thought;
    int prediction = 0;
    double confidence = 0;
    std::string explanation;
    ClassVector probabilities{};

    json to_json() const;
};

// Schema check; throws Error(Schema) naming the offending field.
ArbitrationVerdict parse_verdict(const json& j);
// First balanced {...} in free text (string literals respected), parsed.
std::optional<json> first_json_object(std::string_view text);
ArbitrationVerdict parse_verdict_text(std::string_view text);

struct ChatMessage {
    std::string role;
    std::string content;
};

// One round trip to a chat model. Throws Error(Transport) on network
// failure; returns the assistant text otherwise.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string complete(const std::string& pair_id, const std::vector<ChatMessage>& messages) = 0;
};

inline constexpr std::string_view kRepairInstruction =
    "Your previous reply did not match the required schema. Return only the JSON object, with "
    "\"prediction\" an integer 0-6, \"confidence\" in [0,1] and \"probabilities\" a list of 7 numbers summing to 1.";

// Sends the prompt and validates the reply, retrying up to `max_retries`
// times with a repair instruction when the reply breaks the schema.
ArbitrationVerdict call_arbiter(const std::string& pair_id, const std::string& prompt, Transport& transport,
                                int max_retries = 2);

// Offline stand-in. The file is a JSON object mapping pair_id to either a
// verdict object, a raw reply string, a list of replies (one per attempt) or
// {"transport_error": "..."}.
class MockTransport final : public Transport {
public:
    explicit MockTransport(json table);
    static std::unique_ptr<MockTransport> from_file(const std::filesystem::path& path);

    std::string complete(const std::string& pair_id, const std::vector<ChatMessage>& messages) override;
    std::size_t calls() const;

private:
    json table_;
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> attempts_;
    std::size_t calls_ = 0;
};

struct EndpointConfig {
    std::string url;  // full chat-completions URL
    std::string model = "deepseek-chat";
    std::string credential_env = "CLONEFUSE_ARBITER_KEY";
    int timeout_seconds = 60;
    int max_retries = 2;
    std::size_t max_in_flight = 4;
    double requests_per_minute = 60;  // 0 disables the limiter

    json to_json() const;  // never includes the credential
};

class HttpTransport final : public Transport {
public:
    explicit HttpTransport(EndpointConfig config);
    ~HttpTransport() override;
    std::string complete(const std::string& pair_id, const std::vector<ChatMessage>& messages) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct FinalDecision {
    std::string pair_id;
    int primary_prediction = 0;
    double confidence = 0;
    bool triggered = false;
    bool arbitrated = false;  // an arbiter call was attempted
    int final_prediction = 0;
    std::optional<ArbitrationVerdict> verdict;
    std::optional<std::string> fallback_reason;
    std::int64_t latency_ms = 0;

    json log_row() const;
};

struct ArbitrationRequest {
    std::string pair_id;
    std::string code_left;
    std::string code_right;
    ProbabilityDistribution p;
};

struct DecideOptions {
    std::size_t char_budget = kDefaultCharBudget;
    int max_retries = 2;
    bool guided = true;
};

// Never throws for arbiter failures: they become a fallback to the primary
// prediction. `transport` may be null when nothing can trigger.
FinalDecision decide(const ArbitrationRequest& request, const TriggerPolicy& policy, Transport* transport,
                     const DecideOptions& options = {});

// Runs decide over all requests with at most `max_in_flight` concurrent
// arbiter calls; output order follows input order.
std::vector<FinalDecision> decide_all(const std::vector<ArbitrationRequest>& requests, const TriggerPolicy& policy,
                                      Transport* transport, std::size_t max_in_flight = 4,
                                      const DecideOptions& options = {});

}  // namespace clonefuse::arbiter
