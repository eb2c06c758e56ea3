#include "tess/nn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "tess/series.hpp"

namespace tess::nn {

Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, fan_in)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
}

PatchEmbedding::PatchEmbedding(int d_model, int patch_length_, int stride_, int patch_count,
                               std::mt19937_64& rng)
  : w_p(ad::parameter(init_uniform(d_model, patch_length_, patch_length_, rng))),
    w_pos(ad::parameter(init_uniform(d_model, patch_count, d_model, rng) * 0.1)),
    patch_length(patch_length_),
    stride(stride_)
{ }

ad::Var PatchEmbedding::operator()(const Vector& x_norm) const
{
    const Matrix patches = patchify(x_norm, patch_length, stride);
    if (patches.rows() != w_pos.cols())
        throw InvalidArgument("encode_patches: " + std::to_string(patches.rows())
                              + " patches but positional table has "
                              + std::to_string(w_pos.cols()) + " columns");
    const ad::Var proj = ad::matmul(ad::constant(patches), ad::transpose(w_p));
    return ad::add(proj, ad::transpose(w_pos));
}

void PatchEmbedding::collect(const std::string& prefix, std::vector<NamedParameter>& out) const
{
    out.emplace_back(prefix + "w_p", w_p);
    out.emplace_back(prefix + "w_pos", w_pos);
}

EncoderLayer::EncoderLayer(int d, int heads, int ff, std::mt19937_64& rng)
  : ln1_gamma(ad::parameter(Matrix::Ones(1, d))),
    ln1_beta(ad::parameter(Matrix::Zero(1, d))),
    w_q(ad::parameter(init_uniform(d, d, d, rng))),
    w_k(ad::parameter(init_uniform(d, d, d, rng))),
    w_v(ad::parameter(init_uniform(d, d, d, rng))),
    w_o(ad::parameter(init_uniform(d, d, d, rng))),
    b_o(ad::parameter(Matrix::Zero(1, d))),
    ln2_gamma(ad::parameter(Matrix::Ones(1, d))),
    ln2_beta(ad::parameter(Matrix::Zero(1, d))),
    w_ff1(ad::parameter(init_uniform(d, ff, d, rng))),
    b_ff1(ad::parameter(Matrix::Zero(1, ff))),
    w_ff2(ad::parameter(init_uniform(ff, d, ff, rng))),
    b_ff2(ad::parameter(Matrix::Zero(1, d))),
    n_heads(heads)
{
    detail::require(heads >= 1 && d % heads == 0, "EncoderLayer: d_model must be divisible by heads");
}

ad::Var maybe_dropout(const ad::Var& x, const EncoderLayer::Context& ctx)
{
    if (!ctx.training || ctx.dropout <= 0 || !ctx.rng) return x;
    return ad::dropout(x, ctx.dropout, *ctx.rng);
}

ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& keys_values, const ad::Var& w_q,
                             const ad::Var& w_k, const ad::Var& w_v, const ad::Var& w_o,
                             const ad::Var& b_o, int n_heads, AttentionTrace* trace)
{
    const ad::Var q = ad::matmul(queries, w_q);
    const ad::Var k = ad::matmul(keys_values, w_k);
    const ad::Var v = ad::matmul(keys_values, w_v);
    const Eigen::Index d = q.cols();
    const Eigen::Index dh = d / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        const ad::Var qh = ad::slice_cols(q, h * dh, dh);
        const ad::Var kh = ad::slice_cols(k, h * dh, dh);
        const ad::Var vh = ad::slice_cols(v, h * dh, dh);
        const ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_scale));
        if (trace) trace->weights.push_back(weights.value());
        heads.push_back(ad::matmul(weights, vh));
    }
    const ad::Var merged = n_heads == 1 ? heads.front() : ad::concat_cols(heads);
    return ad::add(ad::matmul(merged, w_o), b_o);
}

ad::Var EncoderLayer::operator()(const ad::Var& x, const Context& ctx) const
{
    const ad::Var a_in = ad::layer_norm_rows(x, ln1_gamma, ln1_beta);
    const ad::Var attn = multi_head_attention(a_in, a_in, w_q, w_k, w_v, w_o, b_o, n_heads, ctx.trace);
    const ad::Var h = ad::add(x, maybe_dropout(attn, ctx));
    const ad::Var f_in = ad::layer_norm_rows(h, ln2_gamma, ln2_beta);
    const ad::Var f = ad::add(ad::matmul(ad::gelu(ad::add(ad::matmul(f_in, w_ff1), b_ff1)), w_ff2), b_ff2);
    return ad::add(h, maybe_dropout(f, ctx));
}

void EncoderLayer::collect(const std::string& prefix, std::vector<NamedParameter>& out) const
{
    out.emplace_back(prefix + "ln1.gamma", ln1_gamma);
    out.emplace_back(prefix + "ln1.beta", ln1_beta);
    out.emplace_back(prefix + "attn.w_q", w_q);
    out.emplace_back(prefix + "attn.w_k", w_k);
    out.emplace_back(prefix + "attn.w_v", w_v);
    out.emplace_back(prefix + "attn.w_o", w_o);
    out.emplace_back(prefix + "attn.b_o", b_o);
    out.emplace_back(prefix + "ln2.gamma", ln2_gamma);
    out.emplace_back(prefix + "ln2.beta", ln2_beta);
    out.emplace_back(prefix + "ff.w1", w_ff1);
    out.emplace_back(prefix + "ff.b1", b_ff1);
    out.emplace_back(prefix + "ff.w2", w_ff2);
    out.emplace_back(prefix + "ff.b2", b_ff2);
}

MlpHead::MlpHead(int in_width, int hidden, int out_width, std::mt19937_64& rng)
  : w1(ad::parameter(init_uniform(in_width, hidden, in_width, rng))),
    b1(ad::parameter(Matrix::Zero(1, hidden))),
    w2(ad::parameter(init_uniform(hidden, out_width, hidden, rng))),
    b2(ad::parameter(Matrix::Zero(1, out_width)))
{ }

ad::Var MlpHead::operator()(const ad::Var& flat) const
{
    return ad::add(ad::matmul(ad::gelu(ad::add(ad::matmul(flat, w1), b1)), w2), b2);
}

void MlpHead::collect(const std::string& prefix, std::vector<NamedParameter>& out) const
{
    out.emplace_back(prefix + "w1", w1);
    out.emplace_back(prefix + "b1", b1);
    out.emplace_back(prefix + "w2", w2);
    out.emplace_back(prefix + "b2", b2);
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"epochs", c.epochs},         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
         {"beta1", c.beta1},           {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},     {"patience", c.patience},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
}

AdamW::AdamW(std::vector<NamedParameter> params, const TrainConfig& cfg)
  : m_params(std::move(params)),
    m_lr(cfg.learning_rate),
    m_wd(cfg.weight_decay),
    m_b1(cfg.beta1),
    m_b2(cfg.beta2),
    m_eps(cfg.adam_eps)
{
    detail::require(m_lr > 0, "AdamW: learning rate must be > 0");
    for (const auto& [name, p] : m_params) {
        m_m.push_back(Matrix::Zero(p.rows(), p.cols()));
        m_v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void AdamW::zero_grad()
{
    for (auto& [name, p] : m_params) p.zero_grad();
}

void AdamW::step()
{
    ++m_t;
    const double c1 = 1.0 - std::pow(m_b1, m_t);
    const double c2 = 1.0 - std::pow(m_b2, m_t);
    for (std::size_t i = 0; i < m_params.size(); ++i) {
        ad::Var& p = m_params[i].second;
        if (p.grad().size() == 0) continue;
        const Matrix& g = p.grad();
        m_m[i] = m_b1 * m_m[i] + (1.0 - m_b1) * g;
        m_v[i] = m_b2 * m_v[i] + (1.0 - m_b2) * g.cwiseAbs2();
        Matrix& w = p.mutable_value();
        w *= 1.0 - m_lr * m_wd;
        w.array() -= m_lr * (m_m[i].array() / c1) / ((m_v[i].array() / c2).sqrt() + m_eps);
    }
}

std::size_t parameter_count(const std::vector<NamedParameter>& params)
{
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += static_cast<std::size_t>(p.value().size());
    return n;
}

std::vector<Matrix> snapshot(const std::vector<NamedParameter>& params)
{
    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const auto& [name, p] : params) out.push_back(p.value());
    return out;
}

void restore(const std::vector<NamedParameter>& params, const std::vector<Matrix>& values)
{
    detail::require(params.size() == values.size(), "restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Var p = params[i].second;
        p.mutable_value() = values[i];
    }
}

LoopReport fit(const std::vector<NamedParameter>& params, std::size_t n_train,
               const std::function<LossParts(std::size_t, std::mt19937_64&)>& sample_loss,
               const std::function<double()>& validation_loss, const TrainConfig& cfg)
{
    detail::require(n_train > 0, "fit: empty training set");
    detail::require(cfg.epochs >= 1 && cfg.batch_size >= 1, "fit: epochs and batch size must be >= 1");

    std::mt19937_64 rng(cfg.seed);
    AdamW opt(params, cfg);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    LoopReport report;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params = snapshot(params);
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            const double inv_b = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            for (std::size_t s = start; s < end; ++s) {
                const LossParts parts = sample_loss(order[s], rng);
                rec.train_forecast += parts.forecast;
                rec.train_gate += parts.gate;
                rec.train_total += parts.total.scalar();
                ad::backward(ad::scale(parts.total, inv_b));
            }
            opt.step();
        }
        const double n = static_cast<double>(n_train);
        rec.train_forecast /= n;
        rec.train_gate /= n;
        rec.train_total /= n;
        rec.val_loss = validation_loss();
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_params = snapshot(params);
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        rec.best_val_loss = best;
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);
        if (since_best >= cfg.patience) {
            report.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    restore(params, best_params);
    return report;
}

} // namespace tess::nn
