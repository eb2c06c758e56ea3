#include "tess/gating.hpp"

#include <cmath>

namespace tess {

namespace {

ad::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-bound, bound);
    ad::Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
}

} // namespace

EmbeddingTable EmbeddingTable::uniform(PrimitiveKind kind, int d_model, std::mt19937_64& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    return {kind, ad::parameter(uniform_matrix(static_cast<Eigen::Index>(candidate_count(kind)),
                                               d_model, bound, rng))};
}

GateParams GateParams::zeros(int d_model, ad::Var shared_projector)
{
    return {ad::parameter(ad::Matrix::Zero(2 * d_model, 1)), ad::parameter(ad::Matrix::Zero(1, 1)),
            std::move(shared_projector)};
}

ad::Var embed_label(const EmbeddingTable& table, const PrimitiveLabel& label)
{
    if (label.kind() != table.kind)
        throw InvalidArgument("embed_label: label kind '" + std::string(kind_slug(label.kind()))
                              + "' does not match table kind '" + std::string(kind_slug(table.kind))
                              + "'");
    return ad::slice_rows(table.rows, static_cast<Eigen::Index>(label.index()), 1);
}

ad::Var gate_logit(const ad::Var& h, double margin, const GateParams& params)
{
    if (!std::isfinite(margin)) throw InvalidArgument("gate_confidence: non-finite margin");
    if (!h.value().allFinite()) throw InvalidArgument("gate_confidence: non-finite embedding");
    const ad::Var joined = ad::concat_cols({h, ad::scale(params.margin_projector, margin)});
    return ad::add(ad::matmul(joined, params.w), params.b);
}

ad::Var gate_confidence(const ad::Var& h, double margin, const GateParams& params)
{
    return ad::sigmoid(gate_logit(h, margin, params));
}

double gate_confidence(const Vector& h, double margin, const GateParams& params)
{
    return gate_confidence(ad::constant(h.transpose()), margin, params).scalar();
}

ad::Var soft_weight(const ad::Var& g, const ad::Var& h) { return ad::mul(h, g); }

Vector soft_weight(double g, const Vector& h)
{
    detail::require(g >= 0 && g <= 1, "soft_weight: g must lie in [0,1]");
    return g * h;
}

int supervision_label(const PrimitiveLabel& predicted, const PrimitiveLabel& truth)
{
    if (predicted.kind() != truth.kind()) throw InvalidArgument("supervision_label: kind mismatch");
    return predicted == truth ? 1 : 0;
}

double gate_loss(std::span<const double> gates, std::span<const int> labels, double eps)
{
    if (gates.size() != labels.size())
        throw InvalidArgument("gate_loss: " + std::to_string(gates.size()) + " gates vs "
                              + std::to_string(labels.size()) + " labels");
    detail::require(!gates.empty(), "gate_loss: empty input");
    double loss = 0;
    for (std::size_t i = 0; i < gates.size(); ++i) {
        const double g = std::clamp(gates[i], eps, 1.0 - eps);
        loss -= labels[i] * std::log(g) + (1 - labels[i]) * std::log(1.0 - g);
    }
    return loss;
}

ad::Var gate_loss(const std::vector<ad::Var>& gates, std::span<const int> labels, double eps)
{
    if (gates.size() != labels.size())
        throw InvalidArgument("gate_loss: " + std::to_string(gates.size()) + " gates vs "
                              + std::to_string(labels.size()) + " labels");
    detail::require(!gates.empty(), "gate_loss: empty input");
    ad::Matrix y(static_cast<Eigen::Index>(labels.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = labels[i];
    return ad::binary_cross_entropy(ad::concat_rows(gates), y, eps);
}

PrimitiveGating::PrimitiveGating(int d_model, std::mt19937_64& rng) : m_d_model(d_model)
{
    detail::require(d_model >= 1, "PrimitiveGating: d_model must be >= 1");
    for (PrimitiveKind k : kAllKinds) m_tables[index_of(k)] = EmbeddingTable::uniform(k, d_model, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    m_margin_projector = ad::parameter(uniform_matrix(1, d_model, bound, rng));
    for (PrimitiveKind k : kAllKinds) m_gates[index_of(k)] = GateParams::zeros(d_model, m_margin_projector);
}

PrimitiveGating::Output PrimitiveGating::apply(const PrimitiveLabel& label, double margin,
                                               std::optional<double> forced_gate) const
{
    const PrimitiveKind k = label.kind();
    Output out;
    out.h = embed_label(m_tables[index_of(k)], label);
    if (forced_gate) {
        detail::require(*forced_gate >= 0 && *forced_gate <= 1, "forced gate must lie in [0,1]");
        out.g = ad::scalar_constant(*forced_gate);
    } else {
        out.g = gate_confidence(out.h, margin, m_gates[index_of(k)]);
    }
    out.h_tilde = soft_weight(out.g, out.h);
    return out;
}

GatedPrimitive PrimitiveGating::snapshot(const PrimitiveLabel& label, double margin,
                                         std::optional<double> forced_gate) const
{
    const Output o = apply(label, margin, forced_gate);
    return {label.kind(), label, o.h.value().row(0).transpose(), o.g.scalar(),
            o.h_tilde.value().row(0).transpose()};
}

std::vector<NamedParameter> PrimitiveGating::parameters() const
{
    std::vector<NamedParameter> out;
    for (PrimitiveKind k : kAllKinds) {
        const std::string slug(kind_slug(k));
        out.emplace_back("embedding." + slug, m_tables[index_of(k)].rows);
        out.emplace_back("gate." + slug + ".w", m_gates[index_of(k)].w);
        out.emplace_back("gate." + slug + ".b", m_gates[index_of(k)].b);
    }
    out.emplace_back("gate.margin_projector", m_margin_projector);
    return out;
}

} // namespace tess
