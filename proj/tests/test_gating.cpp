#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "tess/gating.hpp"
#include "tess/nn.hpp"

using namespace tess;
using doctest::Approx;

namespace {

PrimitiveLabel shape(std::size_t i) { return {PrimitiveKind::Shape, i}; }

} // namespace

TEST_CASE("embed_label on an identity table gives one-hot rows")
{
    const EmbeddingTable t{PrimitiveKind::Shape, ad::parameter(ad::Matrix::Identity(5, 5))};
    for (std::size_t i = 0; i < 5; ++i) {
        const ad::Matrix h = embed_label(t, shape(i)).value();
        CHECK(h == ad::Matrix::Identity(5, 5).row(static_cast<Eigen::Index>(i)));
    }
    CHECK(embed_label(t, shape(2)).value() == embed_label(t, shape(2)).value());
    CHECK_THROWS_AS(embed_label(t, PrimitiveLabel(PrimitiveKind::Lag, 0)), InvalidArgument);
}

TEST_CASE("one optimizer step on one label moves only its row")
{
    std::mt19937_64 rng(1);
    const EmbeddingTable t = EmbeddingTable::uniform(PrimitiveKind::Lag, 6, rng);
    const ad::Matrix before = t.rows.value();
    nn::TrainConfig cfg;
    cfg.weight_decay = 0;
    nn::AdamW opt({{"table", t.rows}}, cfg);
    opt.zero_grad();
    ad::backward(ad::sum(embed_label(t, PrimitiveLabel(PrimitiveKind::Lag, 3))));
    opt.step();
    const ad::Matrix after = t.rows.value();
    for (Eigen::Index r = 0; r < 6; ++r) {
        CAPTURE(r);
        if (r == 3)
            CHECK((after.row(r) - before.row(r)).norm() > 0);
        else
            CHECK(after.row(r) == before.row(r));
    }
}

TEST_CASE("embedding init bounds")
{
    std::mt19937_64 rng(2);
    const EmbeddingTable t = EmbeddingTable::uniform(PrimitiveKind::MeanShift, 16, rng);
    CHECK(t.rows.rows() == 5);
    CHECK(t.rows.cols() == 16);
    CHECK(t.rows.value().cwiseAbs().maxCoeff() <= 0.25);
}

TEST_CASE("gate_confidence")
{
    const int d = 4;
    Vector h(d);
    h << 0.3, -1.2, 0.5, 2.0;
    GateParams p = GateParams::zeros(d, ad::parameter(ad::Matrix::Constant(1, d, 0.5)));
    CHECK(gate_confidence(h, 1.7, p) == 0.5);
    CHECK(gate_confidence(h, -3.0, p) == 0.5);

    p.b.mutable_value()(0, 0) = 20;
    CHECK(gate_confidence(h, 0.0, p) > 0.999999);

    p.b.mutable_value()(0, 0) = 0;
    p.w.mutable_value() << 0.1, 0.2, -0.3, 0.1, 1.0, 1.0, 1.0, 1.0;
    const double g0 = gate_confidence(h, 0.0, p);
    const double g1 = gate_confidence(h, 1.0, p);
    const double g2 = gate_confidence(h, 2.0, p);
    CHECK(g0 < g1);
    CHECK(g1 < g2);

    CHECK_THROWS_AS(gate_confidence(h, std::nan(""), p), InvalidArgument);
}

TEST_CASE("soft_weight")
{
    Vector h(3);
    h << 3, -4, 12;
    CHECK(soft_weight(0.0, h).isZero(0));
    CHECK(soft_weight(1.0, h) == h);
    CHECK(soft_weight(0.5, h).norm() == Approx(0.5 * h.norm()));
    CHECK_THROWS_AS(soft_weight(1.5, h), InvalidArgument);
}

TEST_CASE("supervision_label")
{
    CHECK(supervision_label(shape(1), shape(1)) == 1);
    CHECK(supervision_label(shape(1), shape(2)) == 0);
    CHECK_THROWS_AS(supervision_label(shape(1), PrimitiveLabel(PrimitiveKind::Lag, 1)), InvalidArgument);

    int matches = 0;
    for (int i = 0; i < 10; ++i) matches += supervision_label(shape(i < 7 ? 0 : 1), shape(0));
    CHECK(matches / 10.0 == Approx(0.7));
}

TEST_CASE("gate_loss")
{
    const std::vector<double> half = {0.5};
    CHECK(gate_loss(half, std::vector<int>{1}) == Approx(0.6931471805599453));
    const std::vector<double> sure = {1 - kGateLogEpsilon};
    CHECK(gate_loss(sure, std::vector<int>{1}) == Approx(0).epsilon(1e-6));
    const std::vector<double> two = {0.5, 0.5};
    CHECK(gate_loss(two, std::vector<int>{0, 1}) == Approx(1.3862943611198906));
    CHECK_THROWS_AS(gate_loss(two, std::vector<int>{1}), InvalidArgument);

    const std::vector<double> extremes = {0.0, 1.0};
    const double clamped = gate_loss(extremes, std::vector<int>{1, 0});
    CHECK(std::isfinite(clamped));
    CHECK(clamped > 0);
}

TEST_CASE("gate_loss is nonnegative and its logit gradient is g - y")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 2);
    std::vector<ad::Var> logits, gates;
    std::vector<int> ys;
    for (int i = 0; i < 8; ++i) {
        logits.push_back(ad::parameter(ad::Matrix::Constant(1, 1, n(rng))));
        gates.push_back(ad::sigmoid(logits.back()));
        ys.push_back(i % 3 == 0);
    }
    const ad::Var loss = gate_loss(gates, ys);
    CHECK(loss.scalar() >= 0);
    ad::backward(loss);
    for (int i = 0; i < 8; ++i) CHECK(logits[i].grad()(0, 0) == Approx(gates[i].scalar() - ys[i]).epsilon(1e-12));

    std::vector<NamedParameter> params;
    for (int i = 0; i < 8; ++i) params.emplace_back("z" + std::to_string(i), logits[i]);
    const auto errs = gradcheck::compare(params, [&] {
        std::vector<ad::Var> gs;
        for (const auto& z : logits) gs.push_back(ad::sigmoid(z));
        return gate_loss(gs, ys);
    });
    CHECK(gradcheck::worst(errs) < 1e-4);
}

TEST_CASE("PrimitiveGating starts uninformative")
{
    std::mt19937_64 rng(4);
    const PrimitiveGating gating(8, rng);
    for (PrimitiveKind k : kAllKinds) {
        const GatedPrimitive s = gating.snapshot(PrimitiveLabel(k, 1), 2.5);
        CHECK(s.g == 0.5);
        CHECK(s.h_tilde == 0.5 * s.h);
    }
    const GatedPrimitive forced = gating.snapshot(shape(3), 0.1, 0.0);
    CHECK(forced.h_tilde.isZero(0));
    CHECK(gating.snapshot(shape(3), 0.1, 1.0).h_tilde == forced.h);
    CHECK_THROWS_AS(gating.apply(shape(3), 0.1, 1.5), InvalidArgument);
}

TEST_CASE("gating parameters share one margin projector")
{
    std::mt19937_64 rng(5);
    const PrimitiveGating gating(8, rng);
    const auto params = gating.parameters();
    CHECK(params.size() == 4 * 3 + 1);
    CHECK(params.back().first == "gate.margin_projector");
    for (PrimitiveKind k : kAllKinds) CHECK(gating.gate(k).margin_projector.node() == params.back().second.node());
}
