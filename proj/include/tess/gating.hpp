#pragma once

#include <array>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tess/autodiff.hpp"
#include "tess/primitives.hpp"

namespace tess {

inline constexpr double kGateLogEpsilon = 1e-7;

using NamedParameter = std::pair<std::string, ad::Var>;

/// |V_kind| x d_model learnable rows, one per category.
struct EmbeddingTable {
    PrimitiveKind kind = PrimitiveKind::MeanShift;
    ad::Var rows;

    static EmbeddingTable uniform(PrimitiveKind kind, int d_model, std::mt19937_64& rng);
};

/// g = sigmoid(w' [h ; W_m m] + b). `margin_projector` (W_m, 1 x d_model) is a
/// single node shared by all kinds; w is 2*d_model x 1 and b is 1 x 1.
struct GateParams {
    ad::Var w;
    ad::Var b;
    ad::Var margin_projector;

    static GateParams zeros(int d_model, ad::Var shared_projector);
};

/// Plain-valued snapshot of one gated primitive.
struct GatedPrimitive {
    PrimitiveKind kind = PrimitiveKind::MeanShift;
    PrimitiveLabel label;
    Vector h;
    double g = 0;
    Vector h_tilde;
};

/// Row lookup; gradients flow only into the selected row.
ad::Var embed_label(const EmbeddingTable& table, const PrimitiveLabel& label);

ad::Var gate_logit(const ad::Var& h, double margin, const GateParams& params);
ad::Var gate_confidence(const ad::Var& h, double margin, const GateParams& params);
double gate_confidence(const Vector& h, double margin, const GateParams& params);

ad::Var soft_weight(const ad::Var& g, const ad::Var& h);
Vector soft_weight(double g, const Vector& h);

int supervision_label(const PrimitiveLabel& predicted, const PrimitiveLabel& truth);

/// -sum[y log g + (1-y) log(1-g)] with g clamped to [eps, 1-eps].
double gate_loss(std::span<const double> gates, std::span<const int> labels,
                 double eps = kGateLogEpsilon);
ad::Var gate_loss(const std::vector<ad::Var>& gates, std::span<const int> labels,
                  double eps = kGateLogEpsilon);

/// All embedding tables and gate parameters for the four kinds.
class PrimitiveGating {
public:
    PrimitiveGating() = default;
    PrimitiveGating(int d_model, std::mt19937_64& rng);

    struct Output {
        ad::Var h;
        ad::Var g;        // 1 x 1
        ad::Var h_tilde;  // g * h
    };

    /// Gate one extracted label. `forced_gate` replaces the learned g.
    Output apply(const PrimitiveLabel& label, double margin,
                 std::optional<double> forced_gate = std::nullopt) const;

    GatedPrimitive snapshot(const PrimitiveLabel& label, double margin,
                            std::optional<double> forced_gate = std::nullopt) const;

    const EmbeddingTable& table(PrimitiveKind k) const { return m_tables[index_of(k)]; }
    const GateParams& gate(PrimitiveKind k) const { return m_gates[index_of(k)]; }
    int d_model() const { return m_d_model; }

    std::vector<NamedParameter> parameters() const;

private:
    int m_d_model = 0;
    std::array<EmbeddingTable, kNumKinds> m_tables;
    std::array<GateParams, kNumKinds> m_gates;
    ad::Var m_margin_projector;
};

} // namespace tess
