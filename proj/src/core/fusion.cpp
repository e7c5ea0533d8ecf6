#include "core/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "core/metrics.hpp"

namespace clonefuse::fusion {

namespace {

constexpr const char* kTensorNames[kParamCount] = {
    "prior_w1", "prior_b1", "prior_w2", "prior_b2", "struct_scale", "struct_bias", "w_q",
    "w_k",      "w_v",      "ln_gain",  "ln_bias",  "cls_w",        "cls_b",
};

void check_finite(const std::vector<double>& v, const char* stage) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            fail(ErrorCode::Numeric, std::string("non-finite value in ") + stage + " at index " + std::to_string(i));
}

template <std::size_t N>
void check_finite(const std::array<double, N>& v, const char* stage) {
    check_finite(std::vector<double>(v.begin(), v.end()), stage);
}

void check_input(const FusionInput& in, const FusionParams& p) {
    if (in.h_sem.size() != p.shape.d)
        fail(ErrorCode::InvalidArgument, "h_sem has " + std::to_string(in.h_sem.size()) + " dims, model expects " +
                                             std::to_string(p.shape.d));
    check_finite(in.h_sem, "input h_sem");
    check_finite(in.prior, "input prior");
    check_finite(in.v_ast, "input v_ast");
}

std::array<std::pair<std::size_t, std::size_t>, kParamCount> tensor_shapes(const FusionShape& s) {
    const std::size_t d = s.d, dk = s.d_k, h = s.hidden;
    return {{{h, kNumClasses},
             {h, 1},
             {2 * d, h},
             {2 * d, 1},
             {kTokens, dk},
             {kTokens, dk},
             {dk, d},
             {dk, dk},
             {d, dk},
             {d, 1},
             {d, 1},
             {kNumClasses, d},
             {kNumClasses, 1}}};
}

bool is_weight_matrix(std::size_t i) {
    return i == kPriorW1 || i == kPriorW2 || i == kStructScale || i == kWq || i == kWk || i == kWv || i == kClsW;
}

void validate_shape(const FusionShape& s) {
    if (s.d == 0 || s.d_k == 0 || s.hidden == 0)
        fail(ErrorCode::InvalidArgument, "fusion shape dimensions must be positive");
}

// Film + attention + layer norm; fills the cache fields up to y.
void forward_core(const FusionInput& in, const FusionParams& P, ForwardCache& c) {
    const std::size_t d = P.shape.d, dk = P.shape.d_k, H = P.shape.hidden;
    const auto& W1 = P[kPriorW1];
    const auto& b1 = P[kPriorB1];
    const auto& W2 = P[kPriorW2];
    const auto& b2 = P[kPriorB2];

    c.z1.assign(H, 0.0);
    for (std::size_t j = 0; j < H; ++j) {
        double a = b1[j];
        for (int k = 0; k < kNumClasses; ++k) a += W1.at(j, k) * in.prior[k];
        c.z1[j] = std::tanh(a);
    }
    c.gamma_beta.assign(2 * d, 0.0);
    for (std::size_t m = 0; m < 2 * d; ++m) {
        double a = b2[m];
        for (std::size_t j = 0; j < H; ++j) a += W2.at(m, j) * c.z1[j];
        c.gamma_beta[m] = a;
    }
    c.h_mod.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) c.h_mod[i] = (1.0 + c.gamma_beta[i]) * in.h_sem[i] + c.gamma_beta[d + i];
    check_finite(c.h_mod, "film_modulate");

    const auto& E = P[kStructScale];
    const auto& B = P[kStructBias];
    c.tokens.assign(kTokens * dk, 0.0);
    for (std::size_t t = 0; t < kTokens; ++t)
        for (std::size_t k = 0; k < dk; ++k) c.tokens[t * dk + k] = E.at(t, k) * in.v_ast[t] + B.at(t, k);

    const auto& Wq = P[kWq];
    const auto& Wk = P[kWk];
    const auto& Wv = P[kWv];
    c.q.assign(dk, 0.0);
    for (std::size_t k = 0; k < dk; ++k) {
        double a = 0;
        for (std::size_t i = 0; i < d; ++i) a += Wq.at(k, i) * c.h_mod[i];
        c.q[k] = a;
    }
    c.keys.assign(kTokens * dk, 0.0);
    c.values.assign(kTokens * d, 0.0);
    for (std::size_t t = 0; t < kTokens; ++t) {
        const double* tok = &c.tokens[t * dk];
        for (std::size_t k = 0; k < dk; ++k) {
            double a = 0;
            for (std::size_t k2 = 0; k2 < dk; ++k2) a += Wk.at(k, k2) * tok[k2];
            c.keys[t * dk + k] = a;
        }
        for (std::size_t i = 0; i < d; ++i) {
            double a = 0;
            for (std::size_t k = 0; k < dk; ++k) a += Wv.at(i, k) * tok[k];
            c.values[t * d + i] = a;
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    std::array<double, kTokens> score{};
    for (std::size_t t = 0; t < kTokens; ++t) {
        double a = 0;
        for (std::size_t k = 0; k < dk; ++k) a += c.q[k] * c.keys[t * dk + k];
        score[t] = a * scale;
    }
    const double mx = *std::max_element(score.begin(), score.end());
    double z = 0;
    for (std::size_t t = 0; t < kTokens; ++t) {
        c.attn[t] = std::exp(score[t] - mx);
        z += c.attn[t];
    }
    for (auto& a : c.attn) a /= z;
    check_finite(c.attn, "attention weights");

    std::vector<double> r(c.h_mod);
    for (std::size_t t = 0; t < kTokens; ++t)
        for (std::size_t i = 0; i < d; ++i) r[i] += c.attn[t] * c.values[t * d + i];
    double mean = 0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    c.x_hat.assign(d, 0.0);
    c.y.assign(d, 0.0);
    const auto& g = P[kLnGain];
    const auto& bl = P[kLnBias];
    for (std::size_t i = 0; i < d; ++i) {
        c.x_hat[i] = (r[i] - mean) * c.inv_std;
        c.y[i] = g[i] * c.x_hat[i] + bl[i];
    }
    check_finite(c.y, "cross_attend");
}

}  // namespace

json FusionShape::to_json() const { return {{"d", d}, {"d_k", d_k}, {"hidden", hidden}}; }

FusionParams FusionParams::zeros(const FusionShape& shape) {
    validate_shape(shape);
    FusionParams p;
    p.shape = shape;
    auto shapes = tensor_shapes(shape);
    for (std::size_t i = 0; i < kParamCount; ++i) {
        auto& t = p.t[i];
        t.name = kTensorNames[i];
        t.rows = shapes[i].first;
        t.cols = shapes[i].second;
        t.decay = is_weight_matrix(i);
        t.data.assign(t.rows * t.cols, 0.0);
    }
    std::fill(p.t[kLnGain].data.begin(), p.t[kLnGain].data.end(), 1.0);
    return p;
}

FusionParams FusionParams::init(const FusionShape& shape, std::uint64_t seed,
                                const std::optional<std::array<std::size_t, kNumClasses>>& class_counts) {
    FusionParams p = zeros(shape);
    p.seed = seed;
    Rng rng(mix64(seed ^ 0xf1a7c0deULL));
    auto fill = [&](ParamIndex i, double stddev) {
        for (auto& v : p.t[i].data) v = rng.normal() * stddev;
    };
    const double d = static_cast<double>(shape.d), dk = static_cast<double>(shape.d_k);
    fill(kPriorW1, std::sqrt(1.0 / kNumClasses));
    fill(kStructScale, 1.0);
    fill(kStructBias, 0.1);
    fill(kWq, std::sqrt(1.0 / d));
    fill(kWk, std::sqrt(1.0 / dk));
    fill(kWv, std::sqrt(1.0 / dk));
    fill(kClsW, std::sqrt(1.0 / d));
    if (class_counts) {
        double total = 0;
        for (auto n : *class_counts) total += static_cast<double>(n) + 1.0;
        for (int k = 0; k < kNumClasses; ++k)
            p.t[kClsB][k] = std::log((static_cast<double>((*class_counts)[k]) + 1.0) / total);
    }
    return p;
}

bool FusionParams::finite() const {
    for (const auto& tensor : t)
        for (double v : tensor.data)
            if (!std::isfinite(v)) return false;
    return true;
}

std::size_t FusionParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& tensor : t) n += tensor.size();
    return n;
}

FusionInput FeatureBundle::to_input() const {
    std::string missing;
    if (!prior) missing += " prior";
    if (!structural) missing += " structural";
    if (!left) missing += " left_embedding";
    if (!right) missing += " right_embedding";
    if (!missing.empty()) fail(ErrorCode::InvalidArgument, "incomplete feature bundle for pair " + pair_id + ":" + missing);
    FusionInput in;
    in.h_sem = semantic::pair_semantic_input(*left, *right);
    in.prior = *prior;
    in.v_ast = structural->v;
    return in;
}

std::vector<double> film_modulate(const std::vector<double>& h_sem, const prior::PriorVector& s,
                                  const FusionParams& params) {
    const std::size_t d = params.shape.d, H = params.shape.hidden;
    if (h_sem.size() != d)
        fail(ErrorCode::InvalidArgument,
             "h_sem has " + std::to_string(h_sem.size()) + " dims, model expects " + std::to_string(d));
    check_finite(h_sem, "input h_sem");
    check_finite(s, "input prior");
    const auto& W1 = params[kPriorW1];
    const auto& b1 = params[kPriorB1];
    const auto& W2 = params[kPriorW2];
    const auto& b2 = params[kPriorB2];
    std::vector<double> z1(H);
    for (std::size_t j = 0; j < H; ++j) {
        double a = b1[j];
        for (int k = 0; k < kNumClasses; ++k) a += W1.at(j, k) * s[k];
        z1[j] = std::tanh(a);
    }
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        double gamma = b2[i], beta = b2[d + i];
        for (std::size_t j = 0; j < H; ++j) {
            gamma += W2.at(i, j) * z1[j];
            beta += W2.at(d + i, j) * z1[j];
        }
        out[i] = (1.0 + gamma) * h_sem[i] + beta;
    }
    check_finite(out, "film_modulate");
    return out;
}

AttentionResult cross_attend(const std::vector<double>& h_mod, const std::array<double, kTokens>& v_ast,
                             const FusionParams& params) {
    if (h_mod.size() != params.shape.d)
        fail(ErrorCode::InvalidArgument, "h_mod has " + std::to_string(h_mod.size()) + " dims, model expects " +
                                             std::to_string(params.shape.d));
    check_finite(h_mod, "input h_mod");
    check_finite(v_ast, "input v_ast");
    // Reuse the full forward with an identity FiLM: zero prior MLP output.
    FusionParams p = params;
    std::fill(p.t[kPriorW2].data.begin(), p.t[kPriorW2].data.end(), 0.0);
    std::fill(p.t[kPriorB2].data.begin(), p.t[kPriorB2].data.end(), 0.0);
    FusionInput in;
    in.h_sem = h_mod;
    in.v_ast = v_ast;
    ForwardCache c;
    forward_core(in, p, c);
    return {c.y, c.attn};
}

ClassVector forward_logits(const FusionInput& in, const FusionParams& params, ForwardCache* cache) {
    check_input(in, params);
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    forward_core(in, params, c);
    const auto& W = params[kClsW];
    const auto& b = params[kClsB];
    for (int k = 0; k < kNumClasses; ++k) {
        double a = b[k];
        for (std::size_t i = 0; i < params.shape.d; ++i) a += W.at(k, i) * c.y[i];
        c.logits[k] = a;
    }
    check_finite(c.logits, "classifier logits");
    return c.logits;
}

ProbabilityDistribution forward(const FusionInput& in, const FusionParams& params) {
    return ProbabilityDistribution::from_probs(softmax(forward_logits(in, params)));
}

ProbabilityDistribution forward(const FeatureBundle& bundle, const FusionParams& params) {
    return forward(bundle.to_input(), params);
}

ClassVector smoothed_target(int label, double smoothing) {
    if (label < 0 || label >= kNumClasses) fail(ErrorCode::InvalidArgument, "label out of range: " + std::to_string(label));
    if (!(smoothing >= 0.0 && smoothing < 1.0)) fail(ErrorCode::InvalidArgument, "smoothing must be in [0, 1)");
    ClassVector t;
    t.fill(smoothing / (kNumClasses - 1));
    t[label] = 1.0 - smoothing;
    return t;
}

double loss(const ProbabilityDistribution& p, int label, double smoothing) {
    auto t = smoothed_target(label, smoothing);
    double l = 0;
    for (int k = 0; k < kNumClasses; ++k)
        if (t[k] > 0) l -= t[k] * std::log(p.p[k]);
    return l;
}

double loss_from_logits(const ClassVector& logits, int label, double smoothing) {
    auto t = smoothed_target(label, smoothing);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double v : logits) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    double l = 0;
    for (int k = 0; k < kNumClasses; ++k)
        if (t[k] > 0) l -= t[k] * (logits[k] - lse);
    return l;
}

Gradients::Gradients(const FusionParams& params) {
    for (std::size_t i = 0; i < kParamCount; ++i) g[i].assign(params.t[i].size(), 0.0);
}

void Gradients::clear() {
    for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
}

double batch_loss(const std::vector<const Sample*>& batch, const FusionParams& P, double smoothing, Gradients* grads,
                  std::vector<double>* per_sample) {
    if (batch.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
    const std::size_t d = P.shape.d, dk = P.shape.d_k, H = P.shape.hidden;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    double total = 0;
    ForwardCache c;
    std::vector<double> dy(d), dr(d), dhm(d), dq(dk), dT(kTokens * dk), dgb(2 * d), dz1(H);
    for (const Sample* s : batch) {
        const auto logits = forward_logits(s->x, P, &c);
        const double l = loss_from_logits(logits, s->label, smoothing);
        total += l;
        if (per_sample) per_sample->push_back(l);
        if (!grads) continue;
        auto& G = grads->g;

        // softmax cross-entropy: dL/dlogit = p - t (sum t = 1)
        const auto p = softmax(logits);
        const auto t = smoothed_target(s->label, smoothing);
        ClassVector dlog;
        for (int k = 0; k < kNumClasses; ++k) dlog[k] = (p[k] - t[k]) * inv_n;

        const auto& Wc = P[kClsW];
        std::fill(dy.begin(), dy.end(), 0.0);
        for (int k = 0; k < kNumClasses; ++k) {
            G[kClsB][k] += dlog[k];
            for (std::size_t i = 0; i < d; ++i) {
                G[kClsW][k * d + i] += dlog[k] * c.y[i];
                dy[i] += Wc.at(k, i) * dlog[k];
            }
        }

        // layer norm
        const auto& gain = P[kLnGain];
        double mean_dxh = 0, mean_dxh_xh = 0;
        for (std::size_t i = 0; i < d; ++i) {
            G[kLnGain][i] += dy[i] * c.x_hat[i];
            G[kLnBias][i] += dy[i];
            double dxh = dy[i] * gain[i];
            dr[i] = dxh;
            mean_dxh += dxh;
            mean_dxh_xh += dxh * c.x_hat[i];
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) dr[i] = c.inv_std * (dr[i] - mean_dxh - c.x_hat[i] * mean_dxh_xh);

        // residual: r = h_mod + sum_t attn_t V_t
        dhm = dr;
        std::array<double, kTokens> dattn{};
        for (std::size_t tk = 0; tk < kTokens; ++tk) {
            double a = 0;
            for (std::size_t i = 0; i < d; ++i) a += dr[i] * c.values[tk * d + i];
            dattn[tk] = a;
        }
        double dot = 0;
        for (std::size_t tk = 0; tk < kTokens; ++tk) dot += c.attn[tk] * dattn[tk];
        std::array<double, kTokens> dscore{};
        for (std::size_t tk = 0; tk < kTokens; ++tk) dscore[tk] = c.attn[tk] * (dattn[tk] - dot) * scale;

        const auto& Wq = P[kWq];
        const auto& Wk = P[kWk];
        const auto& Wv = P[kWv];
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dT.begin(), dT.end(), 0.0);
        for (std::size_t tk = 0; tk < kTokens; ++tk) {
            const double* tok = &c.tokens[tk * dk];
            double* dtok = &dT[tk * dk];
            // values: V_t = Wv tok_t, dV_t = attn_t * dr
            for (std::size_t i = 0; i < d; ++i) {
                const double dv = c.attn[tk] * dr[i];
                if (dv == 0.0) continue;
                double* gw = &G[kWv][i * dk];
                for (std::size_t k = 0; k < dk; ++k) {
                    gw[k] += dv * tok[k];
                    dtok[k] += dv * Wv.at(i, k);
                }
            }
            // keys: K_t = Wk tok_t, dK_t = dscore_t * q
            for (std::size_t k = 0; k < dk; ++k) {
                dq[k] += dscore[tk] * c.keys[tk * dk + k];
                const double dkey = dscore[tk] * c.q[k];
                double* gw = &G[kWk][k * dk];
                for (std::size_t k2 = 0; k2 < dk; ++k2) {
                    gw[k2] += dkey * tok[k2];
                    dtok[k2] += dkey * Wk.at(k, k2);
                }
            }
            for (std::size_t k = 0; k < dk; ++k) {
                G[kStructScale][tk * dk + k] += dtok[k] * s->x.v_ast[tk];
                G[kStructBias][tk * dk + k] += dtok[k];
            }
        }
        for (std::size_t k = 0; k < dk; ++k) {
            double* gw = &G[kWq][k * d];
            for (std::size_t i = 0; i < d; ++i) {
                gw[i] += dq[k] * c.h_mod[i];
                dhm[i] += dq[k] * Wq.at(k, i);
            }
        }

        // FiLM: h_mod = (1 + gamma) h + beta
        for (std::size_t i = 0; i < d; ++i) {
            dgb[i] = dhm[i] * s->x.h_sem[i];
            dgb[d + i] = dhm[i];
        }
        const auto& W2 = P[kPriorW2];
        std::fill(dz1.begin(), dz1.end(), 0.0);
        for (std::size_t m = 0; m < 2 * d; ++m) {
            G[kPriorB2][m] += dgb[m];
            double* gw = &G[kPriorW2][m * H];
            for (std::size_t j = 0; j < H; ++j) {
                gw[j] += dgb[m] * c.z1[j];
                dz1[j] += W2.at(m, j) * dgb[m];
            }
        }
        for (std::size_t j = 0; j < H; ++j) {
            const double da = dz1[j] * (1.0 - c.z1[j] * c.z1[j]);
            G[kPriorB1][j] += da;
            for (int k = 0; k < kNumClasses; ++k) G[kPriorW1][j * kNumClasses + k] += da * s->x.prior[k];
        }
    }
    return total * inv_n;
}

double OptimizerConfig::lr_at(std::size_t step) const {
    if (warmup_steps == 0) return lr;
    return lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

OptimizerState::OptimizerState(const FusionParams& params) {
    for (std::size_t i = 0; i < kParamCount; ++i) {
        m[i].assign(params.t[i].size(), 0.0);
        v[i].assign(params.t[i].size(), 0.0);
    }
}

StepResult backward_and_step(const std::vector<const Sample*>& batch, FusionParams& params, OptimizerState& opt,
                             const OptimizerConfig& config, double smoothing, std::vector<double>* per_sample) {
    Gradients grads(params);
    StepResult res;
    res.loss = batch_loss(batch, params, smoothing, &grads, per_sample);
    for (std::size_t i = 0; i < kParamCount; ++i)
        for (double g : grads.g[i])
            if (!std::isfinite(g)) fail(ErrorCode::Numeric, std::string("non-finite gradient for ") + kTensorNames[i]);

    opt.step += 1;
    res.lr = config.lr_at(opt.step);
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < kParamCount; ++i) {
        auto& w = params.t[i].data;
        auto& m = opt.m[i];
        auto& v = opt.v[i];
        const auto& g = grads.g[i];
        const double wd = params.t[i].decay ? config.weight_decay : 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            w[j] -= res.lr * (mh / (std::sqrt(vh) + config.eps) + wd * w[j]);
        }
    }
    return res;
}

json TrainConfig::to_json() const {
    return {{"shape", shape.to_json()},
            {"seed", seed},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"smoothing", smoothing},
            {"lr", optimizer.lr},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"eps", optimizer.eps},
            {"weight_decay", optimizer.weight_decay},
            {"warmup_steps", optimizer.warmup_steps},
            {"init_bias_from_priors", init_bias_from_priors}};
}

std::size_t planned_steps(std::size_t samples, std::size_t epochs, std::size_t batch_size) {
    if (batch_size == 0) fail(ErrorCode::InvalidArgument, "batch size must be positive");
    const std::size_t total = samples * epochs;
    return (total + batch_size - 1) / batch_size;
}

double accuracy(const std::vector<Sample>& data, const FusionParams& params) {
    if (data.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& s : data)
        if (argmax(forward_logits(s.x, params)) == s.label) ++hit;
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& config, const std::vector<Sample>* validation) {
    if (dataset.empty()) fail(ErrorCode::InvalidArgument, "training dataset is empty");
    if (config.epochs == 0) fail(ErrorCode::InvalidArgument, "epochs must be positive");
    if (config.batch_size == 0) fail(ErrorCode::InvalidArgument, "batch size must be positive");
    for (const auto& s : dataset) {
        if (s.label < 0 || s.label >= kNumClasses)
            fail(ErrorCode::InvalidArgument, "label out of range for pair " + s.pair_id);
        if (s.x.h_sem.size() != config.shape.d)
            fail(ErrorCode::InvalidArgument, "pair " + s.pair_id + " has h_sem of " + std::to_string(s.x.h_sem.size()) +
                                                 " dims, expected " + std::to_string(config.shape.d));
    }

    std::optional<std::array<std::size_t, kNumClasses>> counts;
    if (config.init_bias_from_priors) {
        counts.emplace();
        counts->fill(0);
        for (const auto& s : dataset) ++(*counts)[s.label];
    }
    TrainResult res{FusionParams::init(config.shape, config.seed, counts), {}, {}};
    OptimizerState opt(res.params);
    Rng rng(mix64(config.seed ^ 0x5eed0f11ULL));

    const std::size_t n = dataset.size();
    const std::size_t steps = planned_steps(n, config.epochs, config.batch_size);
    std::vector<std::size_t> perm(n);
    std::size_t epoch = 0, cursor = n;  // forces a shuffle before the first sample
    std::vector<double> epoch_loss(config.epochs + 1, 0.0);
    std::vector<std::size_t> consumed(config.epochs + 1, 0);
    std::size_t closed = 0;
    std::vector<const Sample*> batch;
    std::vector<std::size_t> batch_epoch;
    std::vector<double> losses;

    auto close_epoch = [&](std::size_t e, std::size_t step) {
        EpochLog log;
        log.epoch = e;
        log.last_step = step;
        log.mean_loss = epoch_loss[e] / static_cast<double>(n);
        if (validation && !validation->empty()) {
            std::vector<int> truths, preds;
            for (const auto& s : *validation) {
                truths.push_back(s.label);
                preds.push_back(argmax(forward_logits(s.x, res.params)));
            }
            log.validation_macro_f1 = metrics::macro_f1(truths, preds);
        }
        if (config.checkpoint_dir) {
            auto path = *config.checkpoint_dir / ("epoch-" + std::to_string(e) + ".tfck");
            save_checkpoint(path, res.params, CheckpointInfo{step, {{"epoch", e}}});
            log.checkpoint = path.string();
        }
        res.epochs.push_back(log);
    };

    for (std::size_t step = 1; step <= steps; ++step) {
        batch.clear();
        batch_epoch.clear();
        while (batch.size() < config.batch_size) {
            if (cursor == n) {
                if (epoch == config.epochs) break;
                ++epoch;
                std::iota(perm.begin(), perm.end(), std::size_t{0});
                rng.shuffle(perm);
                cursor = 0;
            }
            batch.push_back(&dataset[perm[cursor++]]);
            batch_epoch.push_back(epoch);
        }
        losses.clear();
        const auto r = backward_and_step(batch, res.params, opt, config.optimizer, config.smoothing, &losses);
        res.steps.push_back({step, r.loss, r.lr});
        // a batch may straddle two epochs; each sample's loss goes to its own
        for (std::size_t i = 0; i < losses.size(); ++i) {
            epoch_loss[batch_epoch[i]] += losses[i];
            ++consumed[batch_epoch[i]];
        }
        while (closed < config.epochs && consumed[closed + 1] == n) close_epoch(++closed, step);
    }
    return res;
}

json step_log_json(const StepLog& s) { return {{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}}; }

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return v;
}

}  // namespace

std::string encode_checkpoint(const FusionParams& params, const CheckpointInfo& info) {
    json header;
    header["format"] = "clonefuse-fusion";
    header["shape"] = params.shape.to_json();
    header["seed"] = params.seed;
    header["step"] = info.step;
    if (!info.extra.is_null()) header["extra"] = info.extra;
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& t : params.t) {
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
        offset += t.size();
    }
    header["tensors"] = tensors;
    const std::string h = dump_compact(header);

    std::string out = "TFCK";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    out.reserve(out.size() + offset * 4);
    for (const auto& t : params.t)
        for (double v : t.data) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const FusionParams& params, const CheckpointInfo& info) {
    write_file(path, encode_checkpoint(params, info));
}

FusionParams decode_checkpoint(const std::string& bytes, CheckpointInfo* info, const std::string& origin) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "TFCK") != 0)
        fail(ErrorCode::Format, origin + ": not a fusion checkpoint (bad magic)");
    const auto version = get_u32(bytes, 4);
    if (version != kCheckpointVersion)
        fail(ErrorCode::Format, origin + ": unsupported checkpoint version " + std::to_string(version));
    const auto hlen = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) fail(ErrorCode::Format, origin + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(12, hlen));
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, origin + ": bad checkpoint header: " + e.what());
    }
    FusionShape shape;
    FusionParams p;
    try {
        shape.d = header.at("shape").at("d").get<std::size_t>();
        shape.d_k = header.at("shape").at("d_k").get<std::size_t>();
        shape.hidden = header.at("shape").at("hidden").get<std::size_t>();
        p = FusionParams::zeros(shape);
        p.seed = header.at("seed").get<std::uint64_t>();
        if (info) {
            info->step = header.at("step").get<std::size_t>();
            info->extra = header.value("extra", json());
        }
        const auto& tensors = header.at("tensors");
        if (tensors.size() != kParamCount) fail(ErrorCode::Format, origin + ": expected 13 tensors");
        const std::size_t base = 12 + hlen;
        for (std::size_t i = 0; i < kParamCount; ++i) {
            const auto& d = tensors[i];
            auto& t = p.t[i];
            if (d.at("name").get<std::string>() != t.name || d.at("rows").get<std::size_t>() != t.rows ||
                d.at("cols").get<std::size_t>() != t.cols)
                fail(ErrorCode::Format, origin + ": tensor " + std::to_string(i) + " does not match the declared shape");
            const std::size_t off = base + 4 * d.at("offset").get<std::size_t>();
            if (off + 4 * t.size() > bytes.size()) fail(ErrorCode::Format, origin + ": truncated tensor " + t.name);
            for (std::size_t j = 0; j < t.size(); ++j) {
                const std::uint32_t bits = get_u32(bytes, off + 4 * j);
                float f;
                std::memcpy(&f, &bits, 4);
                t.data[j] = f;
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Format, origin + ": bad checkpoint header: " + e.what());
    }
    if (!p.finite()) fail(ErrorCode::Numeric, origin + ": checkpoint holds non-finite parameters");
    return p;
}

FusionParams load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
    return decode_checkpoint(read_file(path), info, path.string());
}

}  // namespace clonefuse::fusion
