#include "tess/forecaster.hpp"

#include <cmath>

namespace tess {

int ModelConfig::patch_count() const { return static_cast<int>(PatchGrid::make(L, P, S).count); }

void ModelConfig::validate() const
{
    if (L < 1 || H < 1) throw InvalidArgument("model config: L and H must be >= 1");
    PatchGrid::make(L, P, S);
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw InvalidArgument("model config: d_model (" + std::to_string(d_model)
                              + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (n_layers < 0) throw InvalidArgument("model config: n_layers must be >= 0");
    if (ff_width < 1) throw InvalidArgument("model config: ff_width must be >= 1");
    if (K != static_cast<int>(kNumKinds)) throw InvalidArgument("model config: K must be 4");
    if (!(lambda >= 0)) throw InvalidArgument("model config: lambda must be >= 0");
    if (!(dropout >= 0 && dropout < 1)) throw InvalidArgument("model config: dropout must lie in [0,1)");
    if (!(norm_eps > 0)) throw InvalidArgument("model config: norm_eps must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = {{"L", c.L},           {"H", c.H},
         {"P", c.P},           {"S", c.S},
         {"d_model", c.d_model}, {"n_layers", c.n_layers},
         {"n_heads", c.n_heads}, {"ff_width", c.ff_width},
         {"K", c.K},           {"lambda", c.lambda},
         {"dropout", c.dropout}, {"norm_eps", c.norm_eps},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c)
{
    c.L = j.value("L", c.L);
    c.H = j.value("H", c.H);
    c.P = j.value("P", c.P);
    c.S = j.value("S", c.S);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.ff_width = j.value("ff_width", c.ff_width);
    c.K = j.value("K", c.K);
    c.lambda = j.value("lambda", c.lambda);
    c.dropout = j.value("dropout", c.dropout);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.seed = j.value("seed", c.seed);
}

Ablation Ablation::parse(std::string_view name)
{
    if (name == "full") return full();
    if (name == "no_tess") return no_tess();
    if (name == "no_gating") return no_gating();
    constexpr std::string_view prefix = "drop_";
    if (name.substr(0, prefix.size()) == prefix) {
        const std::string_view slug = name.substr(prefix.size());
        for (PrimitiveKind k : kAllKinds)
            if (kind_slug(k) == slug) return drop(k);
        throw InvalidArgument("ablation: unknown primitive '" + std::string(slug) + "'");
    }
    throw InvalidArgument("ablation: unknown mode '" + std::string(name) + "'");
}

std::string Ablation::name() const
{
    switch (mode) {
    case AblationMode::Full: return "full";
    case AblationMode::NoTess: return "no_tess";
    case AblationMode::NoGating: return "no_gating";
    case AblationMode::DropPrimitive: return "drop_" + std::string(kind_slug(dropped));
    }
    return "full";
}

std::string Ablation::display_name() const
{
    switch (mode) {
    case AblationMode::Full: return "Full";
    case AblationMode::NoTess: return "w/o TESS";
    case AblationMode::NoGating: return "w/o Gating";
    case AblationMode::DropPrimitive: return "w/o " + std::string(output_key(dropped));
    }
    return "Full";
}

// ---------------------------------------------------------------------------

Matrix build_prefix(std::span<const GatedPrimitive> gated, int d_model)
{
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(kNumKinds), d_model);
    for (const GatedPrimitive& gp : gated) {
        detail::require(gp.h_tilde.size() == d_model, "build_prefix: embedding width mismatch");
        out.row(static_cast<Eigen::Index>(index_of(gp.kind))) = gp.h_tilde.transpose();
    }
    return out;
}

ad::Var build_prefix(const std::array<std::optional<ad::Var>, kNumKinds>& rows, int d_model)
{
    std::vector<ad::Var> parts;
    parts.reserve(kNumKinds);
    for (const auto& r : rows)
        parts.push_back(r ? *r : ad::constant(Matrix::Zero(1, d_model)));
    return ad::concat_rows(parts);
}

Matrix encode_patches(const Vector& x_norm, const Matrix& w_p, const Matrix& w_pos, int patch_length,
                      int stride)
{
    const Matrix patches = patchify(x_norm, patch_length, stride);
    if (w_p.cols() != patches.cols() || w_pos.cols() != patches.rows() || w_p.rows() != w_pos.rows())
        throw InvalidArgument("encode_patches: shape mismatch (patches " + std::to_string(patches.rows())
                              + "x" + std::to_string(patches.cols()) + ", W_p "
                              + std::to_string(w_p.rows()) + "x" + std::to_string(w_p.cols())
                              + ", W_pos " + std::to_string(w_pos.rows()) + "x"
                              + std::to_string(w_pos.cols()) + ")");
    return patches * w_p.transpose() + w_pos.transpose();
}

ad::Var predict(const ad::Var& z, const NormStats& stats, const nn::MlpHead& head, Eigen::Index n_patches)
{
    detail::require(z.rows() >= n_patches, "predict: fewer rows than patches");
    const ad::Var z_out = ad::slice_rows(z, z.rows() - n_patches, n_patches);
    const ad::Var out = head(ad::flatten(z_out));
    return ad::add(ad::scale(out, stats.s), ad::scalar_constant(stats.mu));
}

nn::LossParts total_loss(const ad::Var& y_hat, const Vector& y, const std::vector<ad::Var>& gates,
                         std::span<const int> gate_labels, double lambda)
{
    if (y_hat.cols() != y.size() || y_hat.rows() != 1)
        throw InvalidArgument("total_loss: prediction " + std::to_string(y_hat.rows()) + "x"
                              + std::to_string(y_hat.cols()) + " vs target of length "
                              + std::to_string(y.size()));
    nn::LossParts parts;
    const ad::Var fcst = ad::mse(y_hat, y.transpose());
    parts.forecast = fcst.scalar();
    if (gates.empty() || lambda == 0) {
        if (!gates.empty()) parts.gate = gate_loss(gates, gate_labels).scalar();
        parts.total = fcst;
        return parts;
    }
    const ad::Var g = gate_loss(gates, gate_labels);
    parts.gate = g.scalar();
    parts.total = ad::add(fcst, ad::scale(g, lambda));
    return parts;
}

// ---------------------------------------------------------------------------

PrefixForecaster::PrefixForecaster(const ModelConfig& cfg, Ablation ablation) : m_cfg(cfg), m_ablation(ablation)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    m_embed = nn::PatchEmbedding(cfg.d_model, cfg.P, cfg.S, cfg.patch_count(), rng);
    m_gating = PrimitiveGating(cfg.d_model, rng);
    for (int i = 0; i < cfg.n_layers; ++i) m_layers.emplace_back(cfg.d_model, cfg.n_heads, cfg.ff_width, rng);
    m_final_gamma = ad::parameter(Matrix::Ones(1, cfg.d_model));
    m_final_beta = ad::parameter(Matrix::Zero(1, cfg.d_model));
    m_head = nn::MlpHead(cfg.patch_count() * cfg.d_model, cfg.ff_width, cfg.H, rng);
}

ForwardResult PrefixForecaster::forward(const Vector& x_obs, const Extraction& extraction,
                                        const ForwardOptions& opts) const
{
    if (x_obs.size() != m_cfg.L)
        throw InvalidArgument("forecast: window length " + std::to_string(x_obs.size())
                              + " does not match L = " + std::to_string(m_cfg.L));
    ForwardResult res;
    const Normalized norm = instance_normalize(x_obs, m_cfg.norm_eps);
    res.stats = norm.stats;
    const ad::Var patches = m_embed(norm.values);

    ad::Var z = patches;
    if (m_ablation.has_prefix()) {
        std::array<std::optional<ad::Var>, kNumKinds> rows;
        for (PrimitiveKind k : kAllKinds) {
            const auto& r = extraction[k];
            if (!r || m_ablation.is_dropped(k)) continue;
            std::optional<double> forced = opts.forced_gate;
            if (!forced && m_ablation.mode == AblationMode::NoGating) forced = 1.0;
            const PrimitiveGating::Output o = m_gating.apply(r->predicted, r->margin, forced);
            rows[index_of(k)] = o.h_tilde;
            res.applied_gates[index_of(k)] = o.g.scalar();
            if (!forced) res.gates[index_of(k)] = o.g;
        }
        z = ad::concat_rows({build_prefix(rows, m_cfg.d_model), patches});
    }
    res.input_rows = z.rows();

    nn::EncoderLayer::Context ctx{opts.training, m_cfg.dropout, opts.rng,
                                  opts.keep_attention ? &res.attention : nullptr};
    for (const nn::EncoderLayer& layer : m_layers) z = layer(z, ctx);
    z = ad::layer_norm_rows(z, m_final_gamma, m_final_beta);
    res.y_hat = predict(z, res.stats, m_head, patches.rows());
    return res;
}

nn::LossParts PrefixForecaster::sample_loss(const Vector& x_obs, const Vector& y, const Extraction& extraction,
                                            const PrimitiveVector& truth, std::mt19937_64* rng) const
{
    ForwardOptions opts;
    opts.training = rng != nullptr;
    opts.rng = rng;
    const ForwardResult fr = forward(x_obs, extraction, opts);
    std::vector<ad::Var> gates;
    std::vector<int> labels;
    for (PrimitiveKind k : kAllKinds) {
        if (!fr.gates[index_of(k)]) continue;
        gates.push_back(*fr.gates[index_of(k)]);
        labels.push_back(supervision_label(extraction[k]->predicted, truth[k]));
    }
    return total_loss(fr.y_hat, y, gates, labels, m_cfg.lambda);
}

std::vector<NamedParameter> PrefixForecaster::parameters() const
{
    std::vector<NamedParameter> out;
    m_embed.collect("patch.", out);
    if (m_ablation.has_prefix()) {
        for (const NamedParameter& p : m_gating.parameters()) {
            const bool gate_param = p.first.rfind("gate.", 0) == 0;
            if (gate_param && !m_ablation.learned_gates()) continue;
            out.push_back(p);
        }
    }
    for (std::size_t i = 0; i < m_layers.size(); ++i)
        m_layers[i].collect("encoder." + std::to_string(i) + ".", out);
    out.emplace_back("final_ln.gamma", m_final_gamma);
    out.emplace_back("final_ln.beta", m_final_beta);
    m_head.collect("head.", out);
    return out;
}

// ---------------------------------------------------------------------------

void ForecastDataset::validate(int L, int H) const
{
    if (windows.empty()) throw InvalidArgument("dataset: empty");
    if (extractions.size() != windows.size() || truth.size() != windows.size())
        throw InvalidArgument("dataset: " + std::to_string(windows.size()) + " windows but "
                              + std::to_string(extractions.size()) + " extractions and "
                              + std::to_string(truth.size()) + " truth vectors");
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const Window& w = windows[i];
        if (w.x_obs.size() != L)
            throw InvalidArgument("dataset: window " + std::to_string(i) + " has length "
                                  + std::to_string(w.x_obs.size()) + ", expected " + std::to_string(L));
        if (!w.y_fut || w.y_fut->size() != H)
            throw InvalidArgument("dataset: window " + std::to_string(i)
                                  + " lacks a forecast segment of length " + std::to_string(H));
    }
}

ForecastDataset make_dataset(std::vector<Window> windows, std::vector<Extraction> extractions,
                             const ThresholdSet& thresholds)
{
    if (windows.size() != extractions.size())
        throw InvalidArgument("make_dataset: " + std::to_string(windows.size()) + " windows vs "
                              + std::to_string(extractions.size()) + " extractions");
    ForecastDataset d;
    d.truth.reserve(windows.size());
    for (const Window& w : windows) {
        if (!w.y_fut) throw InvalidArgument("make_dataset: window without forecast segment");
        d.truth.push_back(extract_all(w.x_obs, *w.y_fut, thresholds));
    }
    d.windows = std::move(windows);
    d.extractions = std::move(extractions);
    return d;
}

void to_json(nlohmann::json& j, const TrainReport& r)
{
    nlohmann::json epochs = nlohmann::json::array();
    for (const nn::EpochRecord& e : r.epochs)
        epochs.push_back({{"train_forecast", e.train_forecast},
                          {"train_gate", e.train_gate},
                          {"train_total", e.train_total},
                          {"val_mse", e.val_loss},
                          {"best_val_mse", e.best_val_loss},
                          {"wall_time_s", e.wall_time_s}});
    j = {{"epochs", epochs},
         {"best_epoch", r.best_epoch},
         {"stopped_early", r.stopped_early},
         {"seed", r.seed},
         {"parameter_count", r.parameter_count},
         {"config", r.config_snapshot}};
}

TrainResult train(const ForecastDataset& train_set, const ForecastDataset& val_set, const ModelConfig& cfg,
                  Ablation ablation, const nn::TrainConfig& train_cfg)
{
    cfg.validate();
    train_set.validate(cfg.L, cfg.H);
    val_set.validate(cfg.L, cfg.H);

    TrainResult out{PrefixForecaster(cfg, ablation), {}};
    const PrefixForecaster& model = out.model;
    const auto params = model.parameters();

    auto sample = [&](std::size_t i, std::mt19937_64& rng) {
        return model.sample_loss(train_set.windows[i].x_obs, *train_set.windows[i].y_fut,
                                 train_set.extractions[i], train_set.truth[i], &rng);
    };
    auto validation = [&] { return evaluate_mse(model, val_set); };
    const nn::LoopReport loop = nn::fit(params, train_set.size(), sample, validation, train_cfg);

    out.report.epochs = loop.epochs;
    out.report.best_epoch = loop.best_epoch;
    out.report.stopped_early = loop.stopped_early;
    out.report.seed = train_cfg.seed;
    out.report.parameter_count = nn::parameter_count(params);
    out.report.config_snapshot = {{"model", cfg}, {"train", train_cfg}, {"ablation", ablation.name()}};
    return out;
}

Vector forecast(const PrefixForecaster& model, const Vector& x_obs, const Extraction& extraction,
                std::optional<double> forced_gate)
{
    ForwardOptions opts;
    opts.forced_gate = forced_gate;
    return model.forward(x_obs, extraction, opts).y_hat.value().row(0).transpose();
}

Vector forecast(const PrefixForecaster& model, const Window& window, const Extraction& extraction,
                std::optional<double> forced_gate)
{
    return forecast(model, window.x_obs, extraction, forced_gate);
}

double evaluate_mse(const PrefixForecaster& model, const ForecastDataset& data)
{
    detail::require(data.size() > 0, "evaluate: empty dataset");
    double total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vector y_hat = forecast(model, data.windows[i], data.extractions[i]);
        total += (y_hat - *data.windows[i].y_fut).squaredNorm() / static_cast<double>(y_hat.size());
    }
    return total / static_cast<double>(data.size());
}

} // namespace tess
