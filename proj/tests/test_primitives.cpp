#include <doctest.h>

#include <random>

#include "oracle.hpp"
#include "tess/primitives.hpp"

using namespace tess;
using doctest::Approx;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

Vector alternating(int n, double lo, double hi)
{
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = i % 2 == 0 ? lo : hi;
    return v;
}

std::string label(PrimitiveLabel l) { return std::string(l.name()); }

Window make_window(Vector x, Vector y)
{
    Window w;
    w.x_obs = std::move(x);
    w.y_fut = std::move(y);
    return w;
}

struct RandomPair {
    Vector x, y;
};

RandomPair random_pair(std::mt19937_64& rng, int L = 24, int H = 16)
{
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> u(-1, 1);
    const double sx = std::exp(u(rng));
    const double sy = sx * std::exp(1.5 * u(rng));
    const double shift = 3 * u(rng);
    const double trend = 0.3 * u(rng);
    const double bump = 3 * u(rng);
    RandomPair p{Vector(L), Vector(H)};
    for (int i = 0; i < L; ++i) p.x[i] = sx * g(rng);
    for (int i = 0; i < H; ++i) {
        const double t = static_cast<double>(i) / (H - 1);
        p.y[i] = shift * sx + trend * sx * i + bump * sx * std::sin(3.14159 * t) + sy * g(rng);
    }
    return p;
}

} // namespace

TEST_CASE("candidate tables")
{
    CHECK(candidate_count(PrimitiveKind::MeanShift) == 5);
    CHECK(candidate_count(PrimitiveKind::Volatility) == 5);
    CHECK(candidate_count(PrimitiveKind::Shape) == 5);
    CHECK(candidate_count(PrimitiveKind::Lag) == 6);
    CHECK(candidates(PrimitiveKind::Lag)[1] == "early-persist");
    CHECK(candidates(PrimitiveKind::Volatility)[4] == "calm");
    CHECK(PrimitiveLabel::parse(PrimitiveKind::Shape, "PEAK").index() == 2);
    CHECK_THROWS_AS(PrimitiveLabel::parse(PrimitiveKind::Shape, "zigzag"), ParseError);
    CHECK_THROWS_AS(PrimitiveLabel(PrimitiveKind::MeanShift, 5), InvalidArgument);
}

TEST_CASE("sample_quantile is type 7")
{
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    CHECK(sample_quantile(v, 0.60) == Approx(60.4));
    CHECK(sample_quantile(v, 0.85) == Approx(85.15));
    CHECK(sample_quantile({3, 1, 2}, 0.5) == 2);
    CHECK(sample_quantile({5}, 0.3) == 5);
}

TEST_CASE("fit_thresholds on a known sample of mean shifts")
{
    // X alternates 0, 2 (mean 1, std 1) and Y = 1 + k plus a zero-mean ripple,
    // so |dmu| = k exactly for k = 1..100.
    std::vector<Window> ws;
    for (int k = 1; k <= 100; ++k)
        ws.push_back(make_window(alternating(8, 0, 2), (alternating(8, -1, 1) * 0.01 * k).array() + 1.0 + k));
    const ThresholdSet t = fit_thresholds(ws);
    CHECK(t.tau1_mean == Approx(60.4).epsilon(1e-9));
    CHECK(t.tau2_mean == Approx(85.15).epsilon(1e-9));
    CHECK(t.tau1_vol < t.tau2_vol);
    CHECK(t.tau_shape == Approx(0.25));
    CHECK(t.n_fcst == 4);
    CHECK(t.eta == Approx(1.5 / 4));

    std::vector<Window> neg;
    for (const Window& w : ws) neg.push_back(make_window(-w.x_obs, -*w.y_fut));
    const ThresholdSet tn = fit_thresholds(neg);
    CHECK(tn.tau1_mean == t.tau1_mean);
    CHECK(tn.tau2_mean == t.tau2_mean);
    CHECK(tn.tau1_vol == t.tau1_vol);
    CHECK(tn.tau2_vol == t.tau2_vol);
    CHECK(tn.tau_shape == t.tau_shape);
}

TEST_CASE("fit_thresholds preconditions")
{
    std::vector<Window> few(10, make_window(alternating(8, 0, 2), alternating(8, 1, 3)));
    CHECK_THROWS_AS(fit_thresholds(few), InvalidArgument);
    std::vector<Window> same(60, make_window(alternating(8, 0, 2), alternating(8, 1, 3)));
    CHECK_THROWS_WITH_AS(fit_thresholds(same), doctest::Contains("degenerate"), InvalidArgument);
}

TEST_CASE("mean_shift_stat")
{
    const Vector x = vec({1, 2, 3, 4});
    CHECK(mean_shift_stat(x, x) == 0);
    CHECK(mean_shift_stat(x, vec({5, 6, 7, 8})) == Approx(3.5777087639996634).epsilon(1e-12));
    CHECK(mean_shift_stat(x.array() + 100.0, vec({105, 106, 107, 108})) == Approx(3.5777087639996634));
    CHECK(std::isfinite(mean_shift_stat(Vector::Constant(4, 2.0), vec({3, 3}))));
}

TEST_CASE("classify_mean_shift bands and boundaries")
{
    const double t1 = 0.5, t2 = 1.0;
    CHECK(label(classify_mean_shift(1.5, t1, t2)) == "strong-rise");
    CHECK(label(classify_mean_shift(1.0, t1, t2)) == "mild-rise");
    CHECK(label(classify_mean_shift(0.7, t1, t2)) == "mild-rise");
    CHECK(label(classify_mean_shift(0.5, t1, t2)) == "stable");
    CHECK(label(classify_mean_shift(0.0, t1, t2)) == "stable");
    CHECK(label(classify_mean_shift(-0.5, t1, t2)) == "stable");
    CHECK(label(classify_mean_shift(-1.0, t1, t2)) == "mild-drop");
    CHECK(label(classify_mean_shift(-1.01, t1, t2)) == "strong-drop");
}

TEST_CASE("volatility_stat")
{
    const Vector x = vec({0, 1, 0, 1, 0});
    CHECK(volatility_stat(x, vec({0, 2, 0, 2, 0})) == Approx(std::log(2.0)).epsilon(1e-8));
    CHECK(volatility_stat(vec({0, 1, 3, 6}), vec({10, 13, 14, 16})) == Approx(0).epsilon(1e-12));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 1);
    Vector y(20), ye(20);
    y[0] = ye[0] = 0;
    for (int i = 1; i < 20; ++i) {
        const double d = g(rng);
        y[i] = y[i - 1] + d;
        ye[i] = ye[i - 1] + std::exp(1.0) * d;
    }
    CHECK(volatility_stat(x, ye) - volatility_stat(x, y) == Approx(1.0).epsilon(1e-7));
}

TEST_CASE("classify_volatility")
{
    CHECK(label(classify_volatility(0.9, 0.2, 0.5)) == "surge");
    CHECK(label(classify_volatility(0.3, 0.2, 0.5)) == "rise");
    CHECK(label(classify_volatility(0.0, 0.2, 0.5)) == "stable");
    CHECK(label(classify_volatility(-0.3, 0.2, 0.5)) == "fall");
    CHECK(label(classify_volatility(-1.5, 0.2, 0.5)) == "calm");
}

TEST_CASE("banding is exhaustive and agrees with the oracle")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 2000; ++i) {
        const double v = u(rng);
        CHECK(classify_mean_shift(v, 0.4, 1.1).index() == oracle::band(v, 0.4, 1.1));
        CHECK(classify_volatility(v, 0.4, 1.1).index() == oracle::band(v, 0.4, 1.1));
    }
    for (double v : {0.4, -0.4, 1.1, -1.1})
        CHECK(classify_mean_shift(v, 0.4, 1.1).index() == oracle::band(v, 0.4, 1.1));
}

TEST_CASE("shape_signs")
{
    CHECK(shape_signs(vec({1, 1, 2, 2, 3, 3, 4, 4}), 4, 0.1) == std::vector<int>{1, 1, 1});
    CHECK(shape_signs(Vector::Constant(8, 2.0), 4, 0.1) == std::vector<int>{0, 0, 0});
    CHECK(shape_signs(vec({1, 1, 3, 3, 2, 2}), 3, 0.5) == std::vector<int>{1, -1});
    CHECK_THROWS_AS(shape_signs(Vector::Zero(7).eval(), 4, 0.1), InvalidArgument);
}

TEST_CASE("classify_shape")
{
    using S = std::vector<int>;
    CHECK(label(classify_shape(S{1, 1, 1})) == "ascend");
    CHECK(label(classify_shape(S{0, -1, 0})) == "descend");
    CHECK(label(classify_shape(S{1, 0, -1})) == "peak");
    CHECK(label(classify_shape(S{-1, -1, 1})) == "trough");
    CHECK(label(classify_shape(S{1, -1, 1})) == "oscillate");
    CHECK(label(classify_shape(S{0, 0, 0})) == "oscillate");
}

TEST_CASE("classify_shape agrees with the oracle on every sign sequence")
{
    for (int n = 1; n <= 5; ++n) {
        int total = 1;
        for (int i = 0; i < n; ++i) total *= 3;
        for (int code = 0; code < total; ++code) {
            std::vector<int> s;
            for (int i = 0, c = code; i < n; ++i, c /= 3) s.push_back(c % 3 - 1);
            CHECK(classify_shape(s).index() == oracle::shape_class(s));
        }
    }
}

TEST_CASE("lag_profile hand example")
{
    // alpha = 0 leaves only the mean term: a = [3, 1, 0, 0].
    const LagProfile p = lag_profile(vec({-1, 1, -1, 1}), vec({3, 3, 1, 1, 0, 0, 0, 0}), 4, 0.0);
    CHECK(p.pi[0] == Approx(0.75));
    CHECK(p.pi[1] == Approx(0.25));
    CHECK(p.pi[2] == 0);
    CHECK(p.centroid == Approx(1.0 / 12));
    CHECK(p.argmax == 0);
    CHECK(p.tail == Approx(0.25));
    CHECK(p.peak == Approx(0.75));
}

TEST_CASE("lag_profile degenerate and boundary cases")
{
    const LagProfile flat = lag_profile(vec({0, 1, 2, 3}), vec({1, 2, 1, 2, 1, 2, 1, 2}), 4, 0.5);
    CHECK(flat.pi.isApprox(Vector::Constant(4, 0.25)));
    CHECK(flat.peak == Approx(0.25));

    const LagProfile last = lag_profile(vec({0, 1, 2, 3}), vec({1, 2, 1, 2, 1, 2, 5, 6}), 4, 0.5);
    CHECK(last.centroid == Approx(1.0));
    CHECK(last.tail == 0);
    CHECK(last.argmax == 3);

    CHECK_THROWS_AS(lag_profile(vec({0, 1, 2}), vec({1, 2, 3, 4}), 4, 0.5), InvalidArgument);
    CHECK_THROWS_AS(lag_profile(vec({0, 1, 2}), vec({1, 2, 3, 4, 5, 6, 7}), 4, 0.5), InvalidArgument);
}

TEST_CASE("classify_lag")
{
    const ThresholdSet t;
    LagProfile p;
    p.peak = 0.3;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "diffuse");
    p.peak = 0.8;
    p.centroid = 0.1;
    p.tail = 0.1;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "early-fade");
    p.tail = 0.5;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "early-persist");
    p.centroid = 0.5;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "mid-persist");
    p.tail = 0.4;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "mid-fade");
    p.centroid = 0.9;
    CHECK(label(classify_lag(p, t.kappa1, t.kappa2, t.rho, t.eta)) == "late");

    LagProfile uniform;
    uniform.pi = Vector::Constant(4, 0.25);
    uniform.peak = 0.25;
    uniform.centroid = 0.5;
    CHECK(label(classify_lag(uniform, t.kappa1, t.kappa2, t.rho, 1.5 / 4)) == "diffuse");
}

TEST_CASE("lag profile invariants on random windows")
{
    std::mt19937_64 rng(6);
    for (int i = 0; i < 300; ++i) {
        const RandomPair p = random_pair(rng);
        const LagProfile l = lag_profile(p.x, p.y, 4, 0.5);
        CHECK(std::abs(l.pi.sum() - 1) < 1e-9);
        CHECK(l.centroid >= 0);
        CHECK(l.centroid <= 1);
        CHECK(l.tail >= 0);
        CHECK(l.tail <= 1 + 1e-12);
        CHECK(l.peak >= 0.25 - 1e-12);
        CHECK(l.peak == l.pi.maxCoeff());
    }
}

TEST_CASE("extract_all on a window that repeats its history")
{
    const Vector x = alternating(16, 0, 1);
    const PrimitiveVector v = extract_all(x, x, ThresholdSet{});
    CHECK(label(v.mean) == "stable");
    CHECK(label(v.vol) == "stable");
    CHECK(label(v.shape) == "oscillate");
    CHECK(label(v.lag) == "diffuse");
}

TEST_CASE("extract_all on a strong ramp with rising variance")
{
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0, 1);
    Vector x(24), y(16);
    for (auto& v : x) v = 0.3 * g(rng);
    for (int i = 0; i < 16; ++i) y[i] = 3 + 0.8 * i + 1.5 * g(rng) * (1 + i / 8.0);
    const ThresholdSet t;
    const PrimitiveVector v = extract_all(x, y, t);
    CHECK(label(v.mean) == "strong-rise");
    CHECK(label(v.vol) == "surge");
    CHECK(label(v.shape) == "ascend");
    const auto o = oracle::psi(oracle::to_seq(x), oracle::to_seq(y), t);
    CHECK(v.lag.index() == o[3]);
    CHECK(extract_all(x, y, t) == v);
}

TEST_CASE("labels are invariant under a common shift")
{
    std::mt19937_64 rng(9);
    const ThresholdSet t;
    for (int i = 0; i < 200; ++i) {
        const RandomPair p = random_pair(rng);
        const PrimitiveVector a = extract_all(p.x, p.y, t);
        const PrimitiveVector b = extract_all(p.x.array() + 4.0, p.y.array() + 4.0, t);
        CHECK(a == b);
    }
}

TEST_CASE("mean shift is scale invariant")
{
    std::mt19937_64 rng(10);
    for (int i = 0; i < 100; ++i) {
        const RandomPair p = random_pair(rng);
        CHECK(mean_shift_stat(p.x * 4.0, p.y * 4.0) == mean_shift_stat(p.x, p.y));
        CHECK(mean_shift_stat(p.x * 3.7, p.y * 3.7) == Approx(mean_shift_stat(p.x, p.y)).epsilon(1e-12));
    }
}

TEST_CASE("extract_all agrees with the brute-force oracle")
{
    std::mt19937_64 rng(11);
    std::vector<Window> fit;
    for (int i = 0; i < 200; ++i) {
        const RandomPair p = random_pair(rng);
        fit.push_back(make_window(p.x, p.y));
    }
    const ThresholdSet t = fit_thresholds(fit);
    for (int i = 0; i < 300; ++i) {
        const RandomPair p = random_pair(rng);
        const PrimitiveVector v = extract_all(p.x, p.y, t);
        const auto o = oracle::psi(oracle::to_seq(p.x), oracle::to_seq(p.y), t);
        for (PrimitiveKind k : kAllKinds) CHECK(v[k].index() == o[index_of(k)]);
    }
}

TEST_CASE("ThresholdSet validation")
{
    ThresholdSet t;
    CHECK_NOTHROW(t.validate());
    t.tau1_mean = 2;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = ThresholdSet{};
    t.kappa2 = 0.2;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = ThresholdSet{};
    CHECK_THROWS_AS(t.validate_for_horizon(10), InvalidArgument);
    CHECK_NOTHROW(t.validate_for_horizon(16));
}
