#include "clonefuse/clonefuse.h"

#include <cstring>
#include <memory>
#include <string>

#include "core/arbiter.hpp"
#include "core/fusion.hpp"
#include "core/lexical.hpp"
#include "core/metrics.hpp"
#include "core/pipeline.hpp"
#include "core/prior.hpp"
#include "core/semantic.hpp"
#include "core/syntax.hpp"

using namespace clonefuse;

struct cf_context {
    json base = json::object();
};
struct cf_tree {
    syntax::SyntaxTree tree;
};
struct cf_store {
    semantic::EmbeddingStore store;
};
struct cf_prior_model {
    prior::PriorModel model;
};
struct cf_fusion_model {
    fusion::FusionParams params;
};

namespace {

thread_local std::string g_last_error;

cf_status to_status(ErrorCode c) {
    switch (c) {
        case ErrorCode::InvalidArgument: return CF_ERR_INVALID_ARGUMENT;
        case ErrorCode::Io: return CF_ERR_IO;
        case ErrorCode::Parse: return CF_ERR_PARSE;
        case ErrorCode::NotFound: return CF_ERR_NOT_FOUND;
        case ErrorCode::Format: return CF_ERR_FORMAT;
        case ErrorCode::Numeric: return CF_ERR_NUMERIC;
        case ErrorCode::Transport: return CF_ERR_TRANSPORT;
        case ErrorCode::Schema: return CF_ERR_SCHEMA;
        case ErrorCode::Usage: return CF_ERR_USAGE;
        case ErrorCode::Internal: return CF_ERR_INTERNAL;
    }
    return CF_ERR_INTERNAL;
}

template <typename F>
cf_status guarded(F&& body) {
    try {
        body();
        g_last_error.clear();
        return CF_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return CF_ERR_FORMAT;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CF_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CF_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

json parse_config(const char* text) {
    if (!text || !*text) return json::object();
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::Usage, "config must be a JSON object");
    return j;
}

ClassVector class_vector(const double* p) {
    ClassVector v;
    for (int k = 0; k < kNumClasses; ++k) v[k] = p[k];
    return v;
}

}  // namespace

extern "C" {

const char* cf_version(void) { return pipeline::kVersion; }

const char* cf_status_name(cf_status status) {
    switch (status) {
        case CF_OK: return "ok";
        case CF_ERR_INVALID_ARGUMENT: return error_code_name(ErrorCode::InvalidArgument);
        case CF_ERR_IO: return error_code_name(ErrorCode::Io);
        case CF_ERR_PARSE: return error_code_name(ErrorCode::Parse);
        case CF_ERR_NOT_FOUND: return error_code_name(ErrorCode::NotFound);
        case CF_ERR_FORMAT: return error_code_name(ErrorCode::Format);
        case CF_ERR_NUMERIC: return error_code_name(ErrorCode::Numeric);
        case CF_ERR_TRANSPORT: return error_code_name(ErrorCode::Transport);
        case CF_ERR_SCHEMA: return error_code_name(ErrorCode::Schema);
        case CF_ERR_USAGE: return error_code_name(ErrorCode::Usage);
        case CF_ERR_INTERNAL: return error_code_name(ErrorCode::Internal);
    }
    return "unknown";
}

const char* cf_last_error(void) { return g_last_error.c_str(); }

void cf_string_free(char* s) { std::free(s); }

cf_status cf_context_create(const char* base_config_json, cf_context** out) {
    return guarded([&] {
        need(out, "out");
        auto ctx = std::make_unique<cf_context>();
        ctx->base = parse_config(base_config_json);
        *out = ctx.release();
    });
}

void cf_context_destroy(cf_context* ctx) { delete ctx; }

cf_status cf_run_stage(cf_context* ctx, const char* stage, const char* config_json, char** result_json) {
    return guarded([&] {
        need(ctx, "ctx");
        need(stage, "stage");
        json cfg = ctx->base;
        const json overrides = parse_config(config_json);
        for (const auto& [k, v] : overrides.items()) cfg[k] = v;
        const auto res = pipeline::run_stage(stage, cfg);
        if (result_json) *result_json = dup_string(res.dump());
    });
}

cf_status cf_lexical_features(const char* left, const char* right, const char* idf_json, double out[18],
                              int* truncated) {
    return guarded([&] {
        need(left, "left");
        need(right, "right");
        need(out, "out");
        const auto a = lexical::tokenize(left);
        const auto b = lexical::tokenize(right);
        const auto idf = idf_json ? lexical::IdfTable::from_json(json::parse(idf_json)) : lexical::IdfTable::fit({a, b});
        const auto v = lexical::assemble_features(a, b, idf);
        const auto arr = v.to_array();
        std::copy(arr.begin(), arr.end(), out);
        if (truncated) *truncated = v.truncated ? 1 : 0;
    });
}

cf_status cf_tree_parse(const char* source, const char* language, cf_tree** out) {
    return guarded([&] {
        need(source, "source");
        need(out, "out");
        auto parser = syntax::make_parser(language ? language : "java");
        *out = new cf_tree{parser->parse(source)};
    });
}

size_t cf_tree_size(const cf_tree* tree) { return tree ? tree->tree.size() : 0; }

void cf_tree_destroy(cf_tree* tree) { delete tree; }

cf_status cf_tree_edit_distance(const cf_tree* a, const cf_tree* b, size_t* out) {
    return guarded([&] {
        need(a, "a");
        need(b, "b");
        need(out, "out");
        *out = syntax::tree_edit_distance(a->tree, b->tree);
    });
}

cf_status cf_structural_vector(const cf_tree* a, const cf_tree* b, double out[6], int* ted_approx) {
    return guarded([&] {
        need(a, "a");
        need(b, "b");
        need(out, "out");
        const auto v = syntax::structural_vector(a->tree, b->tree);
        std::copy(v.v.begin(), v.v.end(), out);
        if (ted_approx) *ted_approx = v.ted_approx ? 1 : 0;
    });
}

cf_status cf_store_open(const char* path, uint32_t expected_dimension, cf_store** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        std::optional<std::uint32_t> dim;
        if (expected_dimension) dim = expected_dimension;
        *out = new cf_store{semantic::EmbeddingStore::open(path, dim)};
    });
}

uint32_t cf_store_dimension(const cf_store* store) { return store ? store->store.dimension() : 0; }

size_t cf_store_size(const cf_store* store) { return store ? store->store.size() : 0; }

cf_status cf_store_get(const cf_store* store, const char* fragment_id, float* out, size_t capacity) {
    return guarded([&] {
        need(store, "store");
        need(fragment_id, "fragment_id");
        need(out, "out");
        const auto e = store->store.get(fragment_id);
        if (capacity < e.vector.size())
            fail(ErrorCode::InvalidArgument, "output buffer holds " + std::to_string(capacity) + " floats, need " +
                                                 std::to_string(e.vector.size()));
        std::copy(e.vector.begin(), e.vector.end(), out);
    });
}

void cf_store_close(cf_store* store) { delete store; }

cf_status cf_prior_load(const char* path, cf_prior_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        json j;
        try {
            j = json::parse(read_file(path));
        } catch (const json::exception& e) {
            fail(ErrorCode::Format, std::string(path) + ": " + e.what());
        }
        *out = new cf_prior_model{prior::PriorModel::from_json(j)};
    });
}

cf_status cf_prior_predict(const cf_prior_model* model, const double features[18], double out[7]) {
    return guarded([&] {
        need(model, "model");
        need(features, "features");
        need(out, "out");
        prior::FeatureRow x;
        std::copy(features, features + lexical::kLexicalDim, x.begin());
        const auto p = prior::predict_prior(model->model, x);
        std::copy(p.begin(), p.end(), out);
    });
}

void cf_prior_destroy(cf_prior_model* model) { delete model; }

cf_status cf_fusion_load(const char* path, cf_fusion_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new cf_fusion_model{fusion::load_checkpoint(path)};
    });
}

size_t cf_fusion_width(const cf_fusion_model* model) { return model ? model->params.shape.d : 0; }

cf_status cf_fusion_forward(const cf_fusion_model* model, const double* h_sem, size_t d, const double prior[7],
                            const double v_ast[6], double out[7]) {
    return guarded([&] {
        need(model, "model");
        need(h_sem, "h_sem");
        need(prior, "prior");
        need(v_ast, "v_ast");
        need(out, "out");
        fusion::FusionInput in;
        in.h_sem.assign(h_sem, h_sem + d);
        std::copy(prior, prior + kNumClasses, in.prior.begin());
        std::copy(v_ast, v_ast + fusion::kTokens, in.v_ast.begin());
        const auto p = fusion::forward(in, model->params);
        std::copy(p.p.begin(), p.p.end(), out);
    });
}

void cf_fusion_destroy(cf_fusion_model* model) { delete model; }

cf_status cf_should_trigger(const double p[7], double tau, const char* mode, int* out) {
    return guarded([&] {
        need(p, "p");
        need(mode, "mode");
        need(out, "out");
        arbiter::TriggerPolicy policy;
        policy.tau = tau;
        policy.mode = arbiter::parse_trigger_mode(mode);
        policy.validate();
        *out = arbiter::should_trigger(ProbabilityDistribution::from_probs(class_vector(p)), policy) ? 1 : 0;
    });
}

cf_status cf_build_prompt(const char* left, const char* right, const double p[7], int guided, char** out) {
    return guarded([&] {
        need(left, "left");
        need(right, "right");
        need(p, "p");
        need(out, "out");
        *out = dup_string(arbiter::build_prompt(left, right, ProbabilityDistribution::from_probs(class_vector(p)),
                                                guided != 0));
    });
}

cf_status cf_macro_f1(const int* truths, const int* preds, size_t n, double* out) {
    return guarded([&] {
        need(out, "out");
        if (n > 0) {
            need(truths, "truths");
            need(preds, "preds");
        }
        *out = metrics::macro_f1(std::vector<int>(truths, truths + n), std::vector<int>(preds, preds + n));
    });
}

}  // extern "C"
