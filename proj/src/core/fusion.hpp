#pragma once
// Trainable fusion head: prior-conditioned FiLM over the semantic pair
// vector, single-head cross-attention over six structural tokens, layer
// norm and a 7-way softmax classifier. Gradients are derived by hand.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/distribution.hpp"
#include "core/lexical.hpp"
#include "core/prior.hpp"
#include "core/semantic.hpp"
#include "core/syntax.hpp"

namespace clonefuse::fusion {

inline constexpr std::size_t kTokens = syntax::kStructuralDim;
inline constexpr double kLayerNormEps = 1e-5;

struct FusionShape {
    std::size_t d = 2 * semantic::kDefaultDimension;  // model width (2D)
    std::size_t d_k = 64;
    std::size_t hidden = 32;

    json to_json() const;
};

// Row-major matrix; vectors are rows x 1.
struct Tensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool decay = false;  // weight decay applies to weight matrices only
    std::vector<double> data;

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    std::size_t size() const { return data.size(); }
};

enum ParamIndex : std::size_t {
    kPriorW1,      // hidden x 7
    kPriorB1,      // hidden
    kPriorW2,      // 2d x hidden (zero at init)
    kPriorB2,      // 2d (zero at init)
    kStructScale,  // 6 x d_k, multiplies v_ast[i]
    kStructBias,   // 6 x d_k, positional bias
    kWq,           // d_k x d
    kWk,           // d_k x d_k
    kWv,           // d x d_k
    kLnGain,       // d
    kLnBias,       // d
    kClsW,         // 7 x d
    kClsB,         // 7
    kParamCount,
};

struct FusionParams {
    FusionShape shape;
    std::uint64_t seed = 0;
    std::array<Tensor, kParamCount> t;

    Tensor& operator[](ParamIndex i) { return t[i]; }
    const Tensor& operator[](ParamIndex i) const { return t[i]; }

    // Everything zero except layer-norm gain (1).
    static FusionParams zeros(const FusionShape& shape);
    // Seeded random init. The last prior layer starts at zero so FiLM is the
    // identity; the classifier bias is log(class frequency) when counts are
    // given (add-one smoothed), else zero.
    static FusionParams init(const FusionShape& shape, std::uint64_t seed,
                             const std::optional<std::array<std::size_t, kNumClasses>>& class_counts = std::nullopt);

    bool finite() const;
    std::size_t parameter_count() const;
};

struct FusionInput {
    std::vector<double> h_sem;  // d
    prior::PriorVector prior{};
    std::array<double, kTokens> v_ast{};
};

// Per-pair features as they come out of the earlier stages. forward() needs
// prior, structural and both embeddings.
struct FeatureBundle {
    std::string pair_id;
    std::optional<lexical::LexicalFeatureVector> lexical;
    std::optional<syntax::StructuralVector> structural;
    std::optional<prior::PriorVector> prior;
    std::optional<semantic::SemanticEmbedding> left;
    std::optional<semantic::SemanticEmbedding> right;

    FusionInput to_input() const;
};

std::vector<double> film_modulate(const std::vector<double>& h_sem, const prior::PriorVector& s,
                                  const FusionParams& params);

struct AttentionResult {
    std::vector<double> output;  // LayerNorm(h_mod + attn) with gain/bias
    std::array<double, kTokens> weights{};
};

AttentionResult cross_attend(const std::vector<double>& h_mod, const std::array<double, kTokens>& v_ast,
                             const FusionParams& params);

// Intermediate values kept for the backward pass.
struct ForwardCache {
    std::vector<double> z1;          // tanh hidden of MLP_prior
    std::vector<double> gamma_beta;  // 2d
    std::vector<double> h_mod;
    std::vector<double> tokens;      // 6 x d_k
    std::vector<double> q;           // d_k
    std::vector<double> keys;        // 6 x d_k
    std::vector<double> values;      // 6 x d
    std::array<double, kTokens> attn{};
    std::vector<double> x_hat;       // normalized residual
    double inv_std = 0;
    std::vector<double> y;           // after gain/bias
    ClassVector logits{};
};

ClassVector forward_logits(const FusionInput& in, const FusionParams& params, ForwardCache* cache = nullptr);
ProbabilityDistribution forward(const FusionInput& in, const FusionParams& params);
ProbabilityDistribution forward(const FeatureBundle& bundle, const FusionParams& params);

ClassVector smoothed_target(int label, double smoothing);
double loss(const ProbabilityDistribution& p, int label, double smoothing = 0.1);
// Same quantity computed from logits via log-softmax.
double loss_from_logits(const ClassVector& logits, int label, double smoothing = 0.1);

struct Sample {
    FusionInput x;
    int label = 0;
    std::string pair_id;
};

struct Gradients {
    std::array<std::vector<double>, kParamCount> g;
    explicit Gradients(const FusionParams& params);
    void clear();
};

// Mean smoothed cross-entropy over `batch`; gradients (of the mean) are
// accumulated into `grads` when given. Summation order is fixed.
double batch_loss(const std::vector<const Sample*>& batch, const FusionParams& params, double smoothing,
                  Gradients* grads, std::vector<double>* per_sample = nullptr);

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 80;

    double lr_at(std::size_t step) const;  // step counts from 1
};

struct OptimizerState {
    std::size_t step = 0;
    std::array<std::vector<double>, kParamCount> m;
    std::array<std::vector<double>, kParamCount> v;

    explicit OptimizerState(const FusionParams& params);
};

// Gradients of the mean batch loss, then one AdamW update. Returns the
// batch loss (before the update) and the learning rate used.
struct StepResult {
    double loss = 0;
    double lr = 0;
};

StepResult backward_and_step(const std::vector<const Sample*>& batch, FusionParams& params, OptimizerState& opt,
                             const OptimizerConfig& config, double smoothing,
                             std::vector<double>* per_sample = nullptr);

struct TrainConfig {
    FusionShape shape;
    std::uint64_t seed = 0;
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double smoothing = 0.1;
    OptimizerConfig optimizer;
    std::optional<std::filesystem::path> checkpoint_dir;
    bool init_bias_from_priors = true;

    json to_json() const;
};

struct StepLog {
    std::size_t step = 0;
    double loss = 0;
    double lr = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t last_step = 0;
    double mean_loss = 0;
    std::optional<double> validation_macro_f1;
    std::optional<std::string> checkpoint;
};

struct TrainResult {
    FusionParams params;
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
};

// Number of optimizer steps: the epochs form one continuous stream of
// per-epoch permutations cut into batches, so only the final batch may be
// short.
std::size_t planned_steps(std::size_t samples, std::size_t epochs, std::size_t batch_size);

TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& config,
                  const std::vector<Sample>* validation = nullptr);

double accuracy(const std::vector<Sample>& data, const FusionParams& params);

// "TFCK" | u32 version | u32 header length | JSON header | f32 LE blobs.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    std::size_t step = 0;
    json extra;
};

std::string encode_checkpoint(const FusionParams& params, const CheckpointInfo& info);
void save_checkpoint(const std::filesystem::path& path, const FusionParams& params, const CheckpointInfo& info);
FusionParams decode_checkpoint(const std::string& bytes, CheckpointInfo* info = nullptr,
                               const std::string& origin = "<memory>");
FusionParams load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

json step_log_json(const StepLog& s);

}  // namespace clonefuse::fusion
