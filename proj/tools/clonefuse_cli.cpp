// Command-line front end. Everything goes through the C API; this file only
// maps flags and config-file keys onto stage configs.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clonefuse/clonefuse.h"

namespace {

using json = nlohmann::json;

struct Flag {
    std::string key;
    CLI::Option* opt = nullptr;
    std::string value;
};

// Options live in a stable container so CLI11 can bind to their storage.
struct Registry {
    std::map<CLI::App*, std::vector<std::unique_ptr<Flag>>> flags;

    // `aliases` is a comma list of extra long names; `key` overrides the
    // config key derived from `name`.
    void add(CLI::App* app, const std::string& name, const std::string& help, const std::string& aliases = "",
             const std::string& key = "") {
        auto f = std::make_unique<Flag>();
        f->key = key.empty() ? name : key;
        for (auto& c : f->key)
            if (c == '-') c = '_';
        std::string names = "--" + name;
        std::size_t start = 0;
        while (start < aliases.size()) {
            auto end = aliases.find(',', start);
            if (end == std::string::npos) end = aliases.size();
            names += ",--" + aliases.substr(start, end - start);
            start = end + 1;
        }
        f->opt = app->add_option(names, f->value, help)->configurable();
        flags[app].push_back(std::move(f));
    }

    void collect(CLI::App* app, json& out) const {
        auto it = flags.find(app);
        if (it == flags.end()) return;
        for (const auto& f : it->second)
            if (f->opt->count() > 0) out[f->key] = f->value;
    }
};

void error_line(const char* code, const std::string& message) {
    json e = {{"error", code}, {"message", message}};
    std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clonefuse: seven-class code clone detection pipeline"};
    app.set_version_flag("--version", std::string(cf_version()));
    app.set_config("--config", "", "INI/TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    Registry reg;
    reg.add(&app, "seed", "random seed (required)");
    reg.add(&app, "work-dir", "directory for stage artifacts (default: .)");
    reg.add(&app, "tau", "arbitration confidence threshold (default 0.6)");
    reg.add(&app, "arbiter-url", "chat-completion endpoint URL");
    {
        auto f = std::make_unique<Flag>();
        f->key = "policy";
        f->opt = app.add_option("--policy", f->value, "arbitration policy")
                     ->check(CLI::IsMember({"off", "all", "label5", "labels2345"}))
                     ->configurable();
        reg.flags[&app].push_back(std::move(f));
    }

    using Opts = std::vector<std::pair<const char*, const char*>>;
    auto add_all = [&](CLI::App* sub, const Opts& opts) {
        for (const auto& [name, help] : opts) reg.add(sub, name, help);
    };
    const char* kTrainPairs = "training pairs (default: work dir)";
    const char* kValPairs = "validation pairs (default: work dir)";
    const char* kTestPairs = "test pairs (default: work dir)";

    auto* curate = app.add_subcommand("curate", "filter, dedup, split and sample the corpus");
    add_all(curate, {{"fragments", "fragment JSONL (required)"},
                     {"pairs", "pair JSONL (required)"},
                     {"min-chars", "drop fragments shorter than this (default 200)"},
                     {"train-ratio", "project share for training (default 0.7)"},
                     {"validation-ratio", "project share for validation (default 0.1)"},
                     {"test-ratio", "project share for test (default 0.2)"},
                     {"diversity", "thin capped labels by greedy diversity (default true)"},
                     {"diversity-bins", "bins per axis for diversity selection (default 4)"}});
    reg.add(curate, "cap-label0", "training cap for label 0 (default 40000)", "train-cap-0");
    reg.add(curate, "cap-label6", "training cap for label 6 (default 25000)", "train-cap-6");
    reg.add(curate, "validation-target", "validation pairs per label (default 1428)", "val-target");
    reg.add(curate, "out", "output directory (same as --work-dir)", "", "work-dir");

    auto* featurize = app.add_subcommand("featurize", "lexical and structural features for every curated pair");
    add_all(featurize, {{"language", "source language (default java)"},
                        {"curated-fragments", "curated fragment JSONL (default: work dir)"},
                        {"train-pairs", kTrainPairs},
                        {"validation-pairs", kValPairs},
                        {"test-pairs", kTestPairs}});

    auto* import = app.add_subcommand("import-embeddings", "validate a TFEM store and copy it into the work dir");
    add_all(import, {{"embeddings", "TFEM store to import (required)"}, {"dim", "expected dimension (default 768)"}});

    auto* train_prior = app.add_subcommand("train-prior", "fit the lexical prior model and score all pairs");
    add_all(train_prior, {{"prior-model", "gbdt or softmax_regression (default gbdt)"},
                          {"prior-rounds", "boosting rounds"},
                          {"prior-depth", "tree depth"},
                          {"prior-shrinkage", "learning rate of the booster"},
                          {"prior-l2", "L2 penalty"},
                          {"lexical", "lexical feature JSONL (default: work dir)"},
                          {"train-pairs", kTrainPairs}});

    auto* train_fusion = app.add_subcommand("train-fusion", "train the fusion head");
    add_all(train_fusion, {{"epochs", "training epochs (default 5)"},
                           {"batch-size", "batch size (default 32)"},
                           {"lr", "peak learning rate (default 1e-4)"},
                           {"warmup-steps", "linear warmup steps (default 80)"},
                           {"weight-decay", "AdamW weight decay"},
                           {"smoothing", "label smoothing (default 0.1)"},
                           {"d-k", "attention key width"},
                           {"hidden", "FiLM hidden width"},
                           {"priors", "prior JSONL (default: work dir)"},
                           {"structural", "structural feature JSONL (default: work dir)"},
                           {"lexical", "lexical feature JSONL (default: work dir)"},
                           {"store", "embedding store (default: work dir)"},
                           {"train-pairs", kTrainPairs},
                           {"validation-pairs", kValPairs}});

    auto* predict = app.add_subcommand("predict", "score a split with a fusion checkpoint");
    add_all(predict, {{"checkpoint", "fusion checkpoint (required)"},
                      {"split", "train, validation or test (default test)"},
                      {"predictions", "output JSONL (default: work dir)"},
                      {"priors", "prior JSONL (default: work dir)"},
                      {"structural", "structural feature JSONL (default: work dir)"},
                      {"lexical", "lexical feature JSONL (default: work dir)"},
                      {"store", "embedding store (default: work dir)"},
                      {"train-pairs", kTrainPairs},
                      {"validation-pairs", kValPairs},
                      {"test-pairs", kTestPairs}});

    auto* arbitrate = app.add_subcommand("arbitrate", "route low-confidence predictions to the arbiter");
    add_all(arbitrate, {{"predictions", "prediction JSONL (default: work dir)"},
                        {"curated-fragments", "curated fragment JSONL (default: work dir)"},
                        {"mock-arbiter", "offline reply table instead of an HTTP endpoint"},
                        {"arbiter-model", "model name sent to the endpoint"},
                        {"credential-env", "env var holding the API key (default CLONEFUSE_ARBITER_KEY)"},
                        {"timeout", "request timeout in seconds (default 60)"},
                        {"max-in-flight", "concurrent arbiter calls (default 4)"},
                        {"requests-per-minute", "rate limit, 0 disables"},
                        {"max-retries", "schema repair retries (default 2)"},
                        {"char-budget", "code points per snippet in the prompt (default 4000)"},
                        {"guided", "include top-3 probabilities in the prompt (default true)"},
                        {"decisions", "output decision log (default: work dir)"}});

    auto* evaluate = app.add_subcommand("evaluate", "metrics report over a decision log");
    add_all(evaluate, {{"decisions", "decision log (default: work dir)"},
                       {"truths", "labelled pairs (default: work dir test split)"},
                       {"out", "report path (default: work dir)"},
                       {"bins", "confidence bin edges (default 0,0.6,0.8,1.0)"},
                       {"predictions", "prediction JSONL for top-k and bins"},
                       {"resamples", "bootstrap resamples (default 1000)"},
                       {"confusion-csv", "also write the confusion matrix here"}});

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_line("usage", e.what());
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    json cfg = json::object();
    reg.collect(&app, cfg);
    reg.collect(sub, cfg);

    cf_context* ctx = nullptr;
    if (cf_context_create(nullptr, &ctx) != CF_OK) {
        error_line("internal", cf_last_error());
        return 1;
    }
    char* result = nullptr;
    const cf_status st = cf_run_stage(ctx, sub->get_name().c_str(), cfg.dump().c_str(), &result);
    cf_context_destroy(ctx);
    if (st != CF_OK) {
        error_line(cf_status_name(st), cf_last_error());
        return st == CF_ERR_USAGE ? 2 : 1;
    }
    std::cout << result << "\n";
    cf_string_free(result);
    return 0;
}
