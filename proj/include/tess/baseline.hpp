#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "tess/forecaster.hpp"

namespace tess {

inline constexpr int kBaselineVocab = 4096;

/// FNV-1a bucket of a token.
int token_id(std::string_view token, int vocab = kBaselineVocab);
std::vector<int> token_ids(std::span<const std::string> tokens, int vocab = kBaselineVocab);

/// Patch encoder whose states attend once over hashed token embeddings.
/// Keys carry no position, so attention over a token subset equals the
/// renormalized attention over the full set.
class BaselineFusionModel {
public:
    BaselineFusionModel() = default;
    /// `n_exogenous` scalars are appended to the head input (0 for text runs).
    BaselineFusionModel(const ModelConfig& cfg, int n_exogenous = 0, int vocab = kBaselineVocab);

    struct Output {
        ad::Var y_hat;  // 1 x H
        Matrix alpha;   // N x M_tok, empty without text
    };

    /// Throws InvalidArgument on an empty token list.
    Output forward(const Vector& x_obs, std::span<const int> tokens, std::span<const double> exogenous = {},
                   bool training = false, std::mt19937_64* rng = nullptr) const;
    /// Same weights, cross-attention skipped.
    Output forward_time_only(const Vector& x_obs, std::span<const double> exogenous = {},
                             bool training = false, std::mt19937_64* rng = nullptr) const;

    const ModelConfig& config() const { return m_cfg; }
    int exogenous_count() const { return m_n_exo; }
    std::vector<NamedParameter> parameters() const;

private:
    ad::Var encode(const Vector& x_norm, bool training, std::mt19937_64* rng) const;
    Output head(const ad::Var& states, const NormStats& stats, std::span<const double> exogenous) const;

    ModelConfig m_cfg;
    int m_n_exo = 0;
    int m_vocab = kBaselineVocab;
    nn::PatchEmbedding m_embed;
    std::vector<nn::EncoderLayer> m_layers;
    ad::Var m_tokens;  // vocab x d
    ad::Var m_ln_gamma, m_ln_beta;
    ad::Var m_wq, m_wk, m_wv, m_wo, m_bo;
    nn::MlpHead m_head;
};

/// One model input: series plus either tokens or exogenous scalars.
struct BaselineInput {
    Vector x_obs;
    std::vector<int> tokens;
    std::vector<double> exogenous;
    Vector y;
};

BaselineFusionModel train_baseline(const std::vector<BaselineInput>& train_set,
                                   const std::vector<BaselineInput>& val_set, const ModelConfig& cfg,
                                   const nn::TrainConfig& train_cfg, nn::LoopReport* report = nullptr);

/// Forward with text when tokens are present, else the time-only path.
Vector baseline_predict(const BaselineFusionModel& model, const BaselineInput& in);

} // namespace tess
