#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tess/autodiff.hpp"
#include "tess/gating.hpp"

// Building blocks shared by the prefix forecaster and the fusion baseline:
// patch embedding, pre-norm encoder layers, the MLP head, AdamW and a
// generic early-stopping training loop.

namespace tess::nn {

using ad::Matrix;

/// Uniform in +-1/sqrt(fan_in).
Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng);

struct PatchEmbedding {
    ad::Var w_p;    // d_model x P
    ad::Var w_pos;  // d_model x N
    int patch_length = 0;
    int stride = 0;

    PatchEmbedding() = default;
    PatchEmbedding(int d_model, int patch_length, int stride, int patch_count, std::mt19937_64& rng);

    /// patchify(x_norm) * W_p' + W_pos'  ->  N x d_model.
    ad::Var operator()(const Vector& x_norm) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

struct AttentionTrace {
    /// One (rows x rows) matrix per head per layer, in layer-major order.
    std::vector<Matrix> weights;
};

struct EncoderLayer {
    ad::Var ln1_gamma, ln1_beta;
    ad::Var w_q, w_k, w_v, w_o;  // d x d
    ad::Var b_o;                 // 1 x d
    ad::Var ln2_gamma, ln2_beta;
    ad::Var w_ff1, b_ff1;  // d x ff, 1 x ff
    ad::Var w_ff2, b_ff2;  // ff x d, 1 x d
    int n_heads = 1;

    EncoderLayer() = default;
    EncoderLayer(int d_model, int n_heads, int ff_width, std::mt19937_64& rng);

    struct Context {
        bool training = false;
        double dropout = 0;
        std::mt19937_64* rng = nullptr;
        AttentionTrace* trace = nullptr;
    };

    /// Pre-norm block: x + MHA(LN(x)), then + FF(LN(.)).
    ad::Var operator()(const ad::Var& x, const Context& ctx) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

/// Multi-head scaled dot-product attention; heads split the model width.
/// Attention weights are appended to `trace` when given.
ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& keys_values, const ad::Var& w_q,
                             const ad::Var& w_k, const ad::Var& w_v, const ad::Var& w_o,
                             const ad::Var& b_o, int n_heads, AttentionTrace* trace);

struct MlpHead {
    ad::Var w1, b1, w2, b2;

    MlpHead() = default;
    MlpHead(int in_width, int hidden, int out_width, std::mt19937_64& rng);

    ad::Var operator()(const ad::Var& flat) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

ad::Var maybe_dropout(const ad::Var& x, const EncoderLayer::Context& ctx);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 40;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int patience = 10;
    std::uint64_t seed = 7;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adaptive moments with decoupled weight decay.
class AdamW {
public:
    AdamW(std::vector<NamedParameter> params, const TrainConfig& cfg);

    void zero_grad();
    /// Applies one update using the currently accumulated gradients.
    void step();
    int steps() const { return m_t; }

private:
    std::vector<NamedParameter> m_params;
    std::vector<Matrix> m_m, m_v;
    double m_lr, m_wd, m_b1, m_b2, m_eps;
    int m_t = 0;
};

struct LossParts {
    ad::Var total;
    double forecast = 0;
    double gate = 0;
};

struct EpochRecord {
    double train_forecast = 0;
    double train_gate = 0;
    double train_total = 0;
    double val_loss = 0;
    double best_val_loss = 0;
    double wall_time_s = 0;
};

struct LoopReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    bool stopped_early = false;
};

/// Mini-batch loop with shuffling, early stopping on validation loss and
/// restoration of the best parameters. Batch losses are averaged.
LoopReport fit(const std::vector<NamedParameter>& params, std::size_t n_train,
               const std::function<LossParts(std::size_t, std::mt19937_64&)>& sample_loss,
               const std::function<double()>& validation_loss, const TrainConfig& cfg);

std::size_t parameter_count(const std::vector<NamedParameter>& params);
std::vector<Matrix> snapshot(const std::vector<NamedParameter>& params);
void restore(const std::vector<NamedParameter>& params, const std::vector<Matrix>& values);

} // namespace tess::nn
