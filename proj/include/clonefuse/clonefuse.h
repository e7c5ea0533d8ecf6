#ifndef CLONEFUSE_CLONEFUSE_H
#define CLONEFUSE_CLONEFUSE_H

/* C interface to the clonefuse library. All handles are opaque. Functions
 * returning cf_status leave a message for cf_last_error() (per thread) when
 * they fail. Strings handed out by the library are released with
 * cf_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(CLONEFUSE_BUILDING_LIBRARY)
#define CF_API __attribute__((visibility("default")))
#else
#define CF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cf_status {
    CF_OK = 0,
    CF_ERR_INVALID_ARGUMENT = 1,
    CF_ERR_IO = 2,
    CF_ERR_PARSE = 3,
    CF_ERR_NOT_FOUND = 4,
    CF_ERR_FORMAT = 5,
    CF_ERR_NUMERIC = 6,
    CF_ERR_TRANSPORT = 7,
    CF_ERR_SCHEMA = 8,
    CF_ERR_USAGE = 9,
    CF_ERR_INTERNAL = 10
} cf_status;

#define CF_NUM_CLASSES 7
#define CF_LEXICAL_DIM 18
#define CF_STRUCTURAL_DIM 6

typedef struct cf_context cf_context;
typedef struct cf_tree cf_tree;
typedef struct cf_store cf_store;
typedef struct cf_prior_model cf_prior_model;
typedef struct cf_fusion_model cf_fusion_model;

CF_API const char* cf_version(void);
CF_API const char* cf_status_name(cf_status status);
CF_API const char* cf_last_error(void);
CF_API void cf_string_free(char* s);

/* Pipeline. base_config_json may be NULL; keys given to cf_run_stage
 * override it. */
CF_API cf_status cf_context_create(const char* base_config_json, cf_context** out);
CF_API void cf_context_destroy(cf_context* ctx);
CF_API cf_status cf_run_stage(cf_context* ctx, const char* stage, const char* config_json, char** result_json);

/* Lexical: 18 features in documented order. idf_json is the content of a
 * fitted idf table; NULL fits one on the two inputs. */
CF_API cf_status cf_lexical_features(const char* left, const char* right, const char* idf_json, double out[18],
                                     int* truncated);

/* Syntax. language may be NULL (java). */
CF_API cf_status cf_tree_parse(const char* source, const char* language, cf_tree** out);
CF_API size_t cf_tree_size(const cf_tree* tree);
CF_API void cf_tree_destroy(cf_tree* tree);
CF_API cf_status cf_tree_edit_distance(const cf_tree* a, const cf_tree* b, size_t* out);
CF_API cf_status cf_structural_vector(const cf_tree* a, const cf_tree* b, double out[6], int* ted_approx);

/* Embedding store; expected_dimension 0 accepts any. */
CF_API cf_status cf_store_open(const char* path, uint32_t expected_dimension, cf_store** out);
CF_API uint32_t cf_store_dimension(const cf_store* store);
CF_API size_t cf_store_size(const cf_store* store);
CF_API cf_status cf_store_get(const cf_store* store, const char* fragment_id, float* out, size_t capacity);
CF_API void cf_store_close(cf_store* store);

/* Prior model (JSON file). */
CF_API cf_status cf_prior_load(const char* path, cf_prior_model** out);
CF_API cf_status cf_prior_predict(const cf_prior_model* model, const double features[18], double out[7]);
CF_API void cf_prior_destroy(cf_prior_model* model);

/* Fusion checkpoint. */
CF_API cf_status cf_fusion_load(const char* path, cf_fusion_model** out);
CF_API size_t cf_fusion_width(const cf_fusion_model* model);
CF_API cf_status cf_fusion_forward(const cf_fusion_model* model, const double* h_sem, size_t d, const double prior[7],
                                   const double v_ast[6], double out[7]);
CF_API void cf_fusion_destroy(cf_fusion_model* model);

/* Arbitration. mode: off, all, label5, labels2345. */
CF_API cf_status cf_should_trigger(const double p[7], double tau, const char* mode, int* out);
CF_API cf_status cf_build_prompt(const char* left, const char* right, const double p[7], int guided, char** out);

/* Metrics. */
CF_API cf_status cf_macro_f1(const int* truths, const int* preds, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif
