#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tess/autodiff.hpp"
#include "tess/gating.hpp"
#include "tess/llm.hpp"
#include "tess/nn.hpp"
#include "tess/primitives.hpp"
#include "tess/series.hpp"

namespace tess {

struct ModelConfig {
    int L = 48;
    int H = 16;
    int P = 8;
    int S = 8;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int ff_width = 64;
    int K = 4;
    double lambda = 0.1;
    double dropout = 0.1;
    double norm_eps = kDefaultNormEpsilon;
    std::uint64_t seed = 7;

    int patch_count() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class AblationMode { Full, NoTess, NoGating, DropPrimitive };

struct Ablation {
    AblationMode mode = AblationMode::Full;
    PrimitiveKind dropped = PrimitiveKind::MeanShift;

    static Ablation full() { return {}; }
    static Ablation no_tess() { return {AblationMode::NoTess, PrimitiveKind::MeanShift}; }
    static Ablation no_gating() { return {AblationMode::NoGating, PrimitiveKind::MeanShift}; }
    static Ablation drop(PrimitiveKind k) { return {AblationMode::DropPrimitive, k}; }

    /// "full", "no_tess", "no_gating", "drop_<slug>" (e.g. drop_mean_shift).
    static Ablation parse(std::string_view name);
    std::string name() const;
    /// Human label used in report tables: "Full", "w/o TESS", ...
    std::string display_name() const;

    bool has_prefix() const { return mode != AblationMode::NoTess; }
    bool learned_gates() const { return mode == AblationMode::Full || mode == AblationMode::DropPrimitive; }
    bool is_dropped(PrimitiveKind k) const { return mode == AblationMode::DropPrimitive && k == dropped; }

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;
    /// Overrides every learned gate with this value.
    std::optional<double> forced_gate;
    bool keep_attention = false;
};

struct ForwardResult {
    ad::Var y_hat;  // 1 x H, original scale
    /// Learned gate per kind; empty where the kind is missing, dropped or ungated.
    std::array<std::optional<ad::Var>, kNumKinds> gates;
    /// Gate value actually applied per kind (0 for missing or dropped).
    std::array<double, kNumKinds> applied_gates{};
    Eigen::Index input_rows = 0;  // rows of Z^(0)
    nn::AttentionTrace attention;
    NormStats stats;
};

/// Z^(0) prefix from gated rows. Rows are placed by kind in the fixed order
/// (MeanShift, Volatility, Shape, Lag) whatever order `gated` comes in; absent
/// kinds give zero rows.
Matrix build_prefix(std::span<const GatedPrimitive> gated, int d_model);
ad::Var build_prefix(const std::array<std::optional<ad::Var>, kNumKinds>& rows, int d_model);

/// patchify(x_norm) W_p' + W_pos'.
Matrix encode_patches(const Vector& x_norm, const Matrix& w_p, const Matrix& w_pos, int patch_length,
                      int stride);

/// Last `n_patches` rows of Z, flattened, through the head, then s*out + mu.
ad::Var predict(const ad::Var& z, const NormStats& stats, const nn::MlpHead& head, Eigen::Index n_patches);

/// L = mean((y_hat - y)^2) + lambda * sum BCE(g, labels).
nn::LossParts total_loss(const ad::Var& y_hat, const Vector& y, const std::vector<ad::Var>& gates,
                         std::span<const int> gate_labels, double lambda);

class PrefixForecaster {
public:
    PrefixForecaster() = default;
    explicit PrefixForecaster(const ModelConfig& cfg, Ablation ablation = {});

    const ModelConfig& config() const { return m_cfg; }
    const Ablation& ablation() const { return m_ablation; }

    ForwardResult forward(const Vector& x_obs, const Extraction& extraction,
                          const ForwardOptions& opts = {}) const;

    /// Loss for one supervised sample; truth drives the gate labels.
    nn::LossParts sample_loss(const Vector& x_obs, const Vector& y, const Extraction& extraction,
                              const PrimitiveVector& truth, std::mt19937_64* rng) const;

    std::vector<NamedParameter> parameters() const;
    std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

    const PrimitiveGating& gating() const { return m_gating; }

private:
    ModelConfig m_cfg;
    Ablation m_ablation;
    nn::PatchEmbedding m_embed;
    PrimitiveGating m_gating;
    std::vector<nn::EncoderLayer> m_layers;
    ad::Var m_final_gamma, m_final_beta;
    nn::MlpHead m_head;
};

/// Supervised windows with aligned extractions and ground-truth labels.
struct ForecastDataset {
    std::vector<Window> windows;
    std::vector<Extraction> extractions;
    std::vector<PrimitiveVector> truth;

    std::size_t size() const { return windows.size(); }
    /// Throws on empty data, missing forecast segments or misalignment.
    void validate(int L, int H) const;
};

/// Fills `truth` from psi(x, y) under `thresholds`.
ForecastDataset make_dataset(std::vector<Window> windows, std::vector<Extraction> extractions,
                             const ThresholdSet& thresholds);

struct TrainReport {
    std::vector<nn::EpochRecord> epochs;
    int best_epoch = -1;
    bool stopped_early = false;
    std::uint64_t seed = 0;
    std::size_t parameter_count = 0;
    nlohmann::json config_snapshot;
};

void to_json(nlohmann::json& j, const TrainReport& r);

struct TrainResult {
    PrefixForecaster model;
    TrainReport report;
};

TrainResult train(const ForecastDataset& train_set, const ForecastDataset& val_set, const ModelConfig& cfg,
                  Ablation ablation, const nn::TrainConfig& train_cfg);

/// Inference path. Throws InvalidArgument when the window length is not L.
Vector forecast(const PrefixForecaster& model, const Window& window, const Extraction& extraction,
                std::optional<double> forced_gate = std::nullopt);
Vector forecast(const PrefixForecaster& model, const Vector& x_obs, const Extraction& extraction,
                std::optional<double> forced_gate = std::nullopt);

/// Mean forecast MSE over a dataset (eval mode).
double evaluate_mse(const PrefixForecaster& model, const ForecastDataset& data);

} // namespace tess
