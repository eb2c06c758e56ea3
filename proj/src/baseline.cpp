#include "tess/baseline.hpp"

#include <cmath>

namespace tess {

int token_id(std::string_view token, int vocab)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return static_cast<int>(h % static_cast<std::uint64_t>(vocab));
}

std::vector<int> token_ids(std::span<const std::string> tokens, int vocab)
{
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const std::string& t : tokens) out.push_back(token_id(t, vocab));
    return out;
}

BaselineFusionModel::BaselineFusionModel(const ModelConfig& cfg, int n_exogenous, int vocab)
  : m_cfg(cfg), m_n_exo(n_exogenous), m_vocab(vocab)
{
    cfg.validate();
    detail::require(n_exogenous >= 0 && vocab >= 1, "baseline: invalid exogenous count or vocabulary");
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    const int d = cfg.d_model;
    m_embed = nn::PatchEmbedding(d, cfg.P, cfg.S, cfg.patch_count(), rng);
    for (int i = 0; i < cfg.n_layers; ++i) m_layers.emplace_back(d, cfg.n_heads, cfg.ff_width, rng);
    m_tokens = ad::parameter(nn::init_uniform(vocab, d, d, rng));
    m_ln_gamma = ad::parameter(Matrix::Ones(1, d));
    m_ln_beta = ad::parameter(Matrix::Zero(1, d));
    m_wq = ad::parameter(nn::init_uniform(d, d, d, rng));
    m_wk = ad::parameter(nn::init_uniform(d, d, d, rng));
    m_wv = ad::parameter(nn::init_uniform(d, d, d, rng));
    m_wo = ad::parameter(nn::init_uniform(d, d, d, rng));
    m_bo = ad::parameter(Matrix::Zero(1, d));
    m_head = nn::MlpHead(cfg.patch_count() * d + n_exogenous, cfg.ff_width, cfg.H, rng);
}

ad::Var BaselineFusionModel::encode(const Vector& x_norm, bool training, std::mt19937_64* rng) const
{
    ad::Var z = m_embed(x_norm);
    const nn::EncoderLayer::Context ctx{training, m_cfg.dropout, rng, nullptr};
    for (const nn::EncoderLayer& layer : m_layers) z = layer(z, ctx);
    return z;
}

BaselineFusionModel::Output BaselineFusionModel::head(const ad::Var& states, const NormStats& stats,
                                                      std::span<const double> exogenous) const
{
    if (static_cast<int>(exogenous.size()) != m_n_exo)
        throw InvalidArgument("baseline: expected " + std::to_string(m_n_exo) + " exogenous values, got "
                              + std::to_string(exogenous.size()));
    ad::Var flat = ad::flatten(ad::layer_norm_rows(states, m_ln_gamma, m_ln_beta));
    if (m_n_exo > 0) {
        Matrix e(1, m_n_exo);
        for (int i = 0; i < m_n_exo; ++i) e(0, i) = exogenous[static_cast<std::size_t>(i)];
        flat = ad::concat_cols({flat, ad::constant(e)});
    }
    const ad::Var out = m_head(flat);
    return {ad::add(ad::scale(out, stats.s), ad::scalar_constant(stats.mu)), Matrix()};
}

BaselineFusionModel::Output BaselineFusionModel::forward(const Vector& x_obs, std::span<const int> tokens,
                                                         std::span<const double> exogenous, bool training,
                                                         std::mt19937_64* rng) const
{
    if (tokens.empty()) throw InvalidArgument("baseline_fusion_forward: empty token list");
    if (x_obs.size() != m_cfg.L)
        throw InvalidArgument("baseline: window length " + std::to_string(x_obs.size()) + " != L = "
                              + std::to_string(m_cfg.L));
    const Normalized norm = instance_normalize(x_obs, m_cfg.norm_eps);
    const ad::Var z = encode(norm.values, training, rng);

    std::vector<ad::Var> rows;
    rows.reserve(tokens.size());
    for (int t : tokens) {
        detail::require(t >= 0 && t < m_vocab, "baseline: token id out of range");
        rows.push_back(ad::slice_rows(m_tokens, t, 1));
    }
    const ad::Var text = ad::concat_rows(rows);

    nn::AttentionTrace trace;
    const ad::Var q_in = ad::layer_norm_rows(z, m_ln_gamma, m_ln_beta);
    const ad::Var attn = nn::multi_head_attention(q_in, text, m_wq, m_wk, m_wv, m_wo, m_bo, 1, &trace);
    Output out = head(ad::add(z, attn), norm.stats, exogenous);
    out.alpha = trace.weights.front();
    return out;
}

BaselineFusionModel::Output BaselineFusionModel::forward_time_only(const Vector& x_obs,
                                                                   std::span<const double> exogenous,
                                                                   bool training, std::mt19937_64* rng) const
{
    if (x_obs.size() != m_cfg.L)
        throw InvalidArgument("baseline: window length " + std::to_string(x_obs.size()) + " != L = "
                              + std::to_string(m_cfg.L));
    const Normalized norm = instance_normalize(x_obs, m_cfg.norm_eps);
    return head(encode(norm.values, training, rng), norm.stats, exogenous);
}

std::vector<NamedParameter> BaselineFusionModel::parameters() const
{
    std::vector<NamedParameter> out;
    m_embed.collect("patch.", out);
    for (std::size_t i = 0; i < m_layers.size(); ++i)
        m_layers[i].collect("encoder." + std::to_string(i) + ".", out);
    out.emplace_back("tokens.embedding", m_tokens);
    out.emplace_back("cross.ln.gamma", m_ln_gamma);
    out.emplace_back("cross.ln.beta", m_ln_beta);
    out.emplace_back("cross.w_q", m_wq);
    out.emplace_back("cross.w_k", m_wk);
    out.emplace_back("cross.w_v", m_wv);
    out.emplace_back("cross.w_o", m_wo);
    out.emplace_back("cross.b_o", m_bo);
    m_head.collect("head.", out);
    return out;
}

Vector baseline_predict(const BaselineFusionModel& model, const BaselineInput& in)
{
    const BaselineFusionModel::Output o = in.tokens.empty() ? model.forward_time_only(in.x_obs, in.exogenous)
                                                            : model.forward(in.x_obs, in.tokens, in.exogenous);
    return o.y_hat.value().row(0).transpose();
}

BaselineFusionModel train_baseline(const std::vector<BaselineInput>& train_set,
                                   const std::vector<BaselineInput>& val_set, const ModelConfig& cfg,
                                   const nn::TrainConfig& train_cfg, nn::LoopReport* report)
{
    detail::require(!train_set.empty() && !val_set.empty(), "train_baseline: empty split");
    const int n_exo = static_cast<int>(train_set.front().exogenous.size());
    BaselineFusionModel model(cfg, n_exo);
    auto sample = [&](std::size_t i, std::mt19937_64& rng) {
        const BaselineInput& in = train_set[i];
        const BaselineFusionModel::Output o = in.tokens.empty()
                                                  ? model.forward_time_only(in.x_obs, in.exogenous, true, &rng)
                                                  : model.forward(in.x_obs, in.tokens, in.exogenous, true, &rng);
        nn::LossParts parts;
        parts.total = ad::mse(o.y_hat, in.y.transpose());
        parts.forecast = parts.total.scalar();
        return parts;
    };
    auto validation = [&] {
        double total = 0;
        for (const BaselineInput& in : val_set)
            total += (baseline_predict(model, in) - in.y).squaredNorm() / static_cast<double>(in.y.size());
        return total / static_cast<double>(val_set.size());
    };
    nn::LoopReport r = nn::fit(model.parameters(), train_set.size(), sample, validation, train_cfg);
    if (report) *report = std::move(r);
    return model;
}

} // namespace tess
