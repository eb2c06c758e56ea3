#include "tess/primitives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace tess {

namespace {

constexpr std::array<std::string_view, 5> kMeanNames = {"strong-rise", "mild-rise", "stable",
                                                        "mild-drop", "strong-drop"};
constexpr std::array<std::string_view, 5> kVolNames = {"surge", "rise", "stable", "fall",
                                                       "calm"};
constexpr std::array<std::string_view, 5> kShapeNames = {"ascend", "descend", "peak", "trough",
                                                         "oscillate"};
constexpr std::array<std::string_view, 6> kLagNames = {"early-fade", "early-persist", "mid-fade",
                                                       "mid-persist", "late", "diffuse"};

bool iequals(std::string_view a, std::string_view b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i]))
            != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

// Shared five-band rule; index 0 is the strong positive band.
std::size_t five_band(double value, double tau1, double tau2)
{
    detail::require(std::isfinite(value), "banding: non-finite statistic");
    detail::require(0 < tau1 && tau1 < tau2, "banding: need 0 < tau1 < tau2");
    if (value > tau2) return 0;
    if (value > tau1) return 1;
    if (value >= -tau1) return 2;
    if (value >= -tau2) return 3;
    return 4;
}

void check_patching(Eigen::Index horizon, int n_fcst)
{
    detail::require(n_fcst >= 2, "n_fcst must be >= 2");
    if (horizon % n_fcst != 0) {
        std::ostringstream msg;
        msg << "n_fcst " << n_fcst << " does not divide horizon " << horizon;
        throw InvalidArgument(msg.str());
    }
}

} // namespace

std::span<const std::string_view> candidates(PrimitiveKind kind)
{
    switch (kind) {
    case PrimitiveKind::MeanShift: return kMeanNames;
    case PrimitiveKind::Volatility: return kVolNames;
    case PrimitiveKind::Shape: return kShapeNames;
    case PrimitiveKind::Lag: return kLagNames;
    }
    throw InvalidArgument("unknown primitive kind");
}

std::size_t candidate_count(PrimitiveKind kind) { return candidates(kind).size(); }

std::string_view output_key(PrimitiveKind kind)
{
    switch (kind) {
    case PrimitiveKind::MeanShift: return "Mean Shift";
    case PrimitiveKind::Volatility: return "Volatility";
    case PrimitiveKind::Shape: return "Shape";
    case PrimitiveKind::Lag: return "Lag";
    }
    throw InvalidArgument("unknown primitive kind");
}

std::string_view kind_slug(PrimitiveKind kind)
{
    switch (kind) {
    case PrimitiveKind::MeanShift: return "mean_shift";
    case PrimitiveKind::Volatility: return "volatility";
    case PrimitiveKind::Shape: return "shape";
    case PrimitiveKind::Lag: return "lag";
    }
    throw InvalidArgument("unknown primitive kind");
}

PrimitiveKind kind_from_slug(std::string_view slug)
{
    for (PrimitiveKind k : kAllKinds) {
        if (kind_slug(k) == slug) return k;
    }
    throw InvalidArgument("unknown primitive kind '" + std::string(slug) + "'");
}

PrimitiveLabel::PrimitiveLabel(PrimitiveKind kind, std::size_t index)
  : m_kind(kind), m_index(index)
{
    detail::require(index < candidate_count(kind), "PrimitiveLabel: index out of range");
}

PrimitiveLabel PrimitiveLabel::parse(PrimitiveKind kind, std::string_view name)
{
    const auto names = candidates(kind);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (iequals(names[i], name)) return PrimitiveLabel(kind, i);
    }
    throw ParseError("out-of-domain value '" + std::string(name) + "' for "
                     + std::string(output_key(kind)));
}

const PrimitiveLabel& PrimitiveVector::operator[](PrimitiveKind k) const
{
    switch (k) {
    case PrimitiveKind::MeanShift: return mean;
    case PrimitiveKind::Volatility: return vol;
    case PrimitiveKind::Shape: return shape;
    case PrimitiveKind::Lag: return lag;
    }
    throw InvalidArgument("unknown primitive kind");
}

PrimitiveLabel& PrimitiveVector::operator[](PrimitiveKind k)
{
    return const_cast<PrimitiveLabel&>(std::as_const(*this)[k]);
}

void ThresholdSet::validate() const
{
    auto fail = [](const std::string& what) { throw InvalidArgument("ThresholdSet: " + what); };
    if (!(0 < tau1_mean && tau1_mean < tau2_mean)) fail("need 0 < tau1_mean < tau2_mean");
    if (!(0 < tau1_vol && tau1_vol < tau2_vol)) fail("need 0 < tau1_vol < tau2_vol");
    if (!(tau_shape > 0)) fail("need tau_shape > 0");
    if (!(0 < kappa1 && kappa1 < kappa2 && kappa2 < 1)) fail("need 0 < kappa1 < kappa2 < 1");
    if (!(0 < rho && rho < 1)) fail("need rho in (0,1)");
    if (!(0 < eta && eta < 1)) fail("need eta in (0,1)");
    if (!(alpha >= 0)) fail("need alpha >= 0");
    if (!(eps > 0)) fail("need eps > 0");
    if (n_fcst < 2) fail("need n_fcst >= 2");
}

void ThresholdSet::validate_for_horizon(Eigen::Index horizon) const
{
    validate();
    check_patching(horizon, n_fcst);
}

double sample_quantile(std::vector<double> values, double p)
{
    detail::require(!values.empty(), "sample_quantile: empty sample");
    detail::require(p >= 0 && p <= 1, "sample_quantile: p outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ThresholdSet fit_thresholds(std::span<const Window> train_windows, const ThresholdConfig& cfg)
{
    detail::require(0 < cfg.q1 && cfg.q1 < cfg.q2 && cfg.q2 < 1,
                    "fit_thresholds: need 0 < q1 < q2 < 1");
    std::vector<double> abs_mu, abs_vol, sigma_x;
    for (const Window& w : train_windows) {
        if (!w.y_fut) continue;
        abs_mu.push_back(std::abs(mean_shift_stat(w.x_obs, *w.y_fut, cfg.eps)));
        abs_vol.push_back(std::abs(volatility_stat(w.x_obs, *w.y_fut, cfg.eps)));
        sigma_x.push_back(population_std(w.x_obs));
    }
    if (abs_mu.size() < cfg.min_windows) {
        std::ostringstream msg;
        msg << "fit_thresholds: need at least " << cfg.min_windows
            << " windows with forecast segments, got " << abs_mu.size();
        throw InvalidArgument(msg.str());
    }

    ThresholdSet thr;
    thr.tau1_mean = sample_quantile(abs_mu, cfg.q1);
    thr.tau2_mean = sample_quantile(abs_mu, cfg.q2);
    thr.tau1_vol = sample_quantile(abs_vol, cfg.q1);
    thr.tau2_vol = sample_quantile(abs_vol, cfg.q2);
    thr.tau_shape = cfg.shape_factor * sample_quantile(sigma_x, 0.5);
    thr.kappa1 = cfg.kappa1;
    thr.kappa2 = cfg.kappa2;
    thr.rho = cfg.rho;
    thr.eta = cfg.eta_factor / cfg.n_fcst;
    thr.alpha = cfg.alpha;
    thr.eps = cfg.eps;
    thr.n_fcst = cfg.n_fcst;

    auto degenerate = [](const char* which, double t1, double t2) {
        if (!(0 < t1 && t1 < t2)) {
            std::ostringstream msg;
            msg << "fit_thresholds: degenerate " << which << " distribution (tau1=" << t1
                << ", tau2=" << t2 << "); training statistics lack spread";
            throw InvalidArgument(msg.str());
        }
    };
    degenerate("mean-shift", thr.tau1_mean, thr.tau2_mean);
    degenerate("volatility", thr.tau1_vol, thr.tau2_vol);
    if (!(thr.tau_shape > 0))
        throw InvalidArgument("fit_thresholds: degenerate shape threshold (median sigma(X) = 0)");
    thr.validate();
    return thr;
}

double mean_shift_stat(VecRef x, VecRef y, double eps)
{
    detail::require(x.size() >= 2, "mean_shift_stat: L must be >= 2");
    detail::require(y.size() >= 1, "mean_shift_stat: H must be >= 1");
    return (y.mean() - x.mean()) / std::max(population_std(x), eps);
}

PrimitiveLabel classify_mean_shift(double delta_mu, double tau1, double tau2)
{
    return PrimitiveLabel(PrimitiveKind::MeanShift, five_band(delta_mu, tau1, tau2));
}

double volatility_stat(VecRef x, VecRef y, double eps)
{
    detail::require(x.size() >= 2 && y.size() >= 2, "volatility_stat: L and H must be >= 2");
    const double sy = population_std(first_difference(y));
    const double sx = population_std(first_difference(x));
    return std::log((sy + eps) / (sx + eps));
}

PrimitiveLabel classify_volatility(double r_sigma, double tau1, double tau2)
{
    return PrimitiveLabel(PrimitiveKind::Volatility, five_band(r_sigma, tau1, tau2));
}

std::vector<int> shape_signs(VecRef y, int n_fcst, double tau_shape)
{
    check_patching(y.size(), n_fcst);
    const Eigen::Index len = y.size() / n_fcst;
    std::vector<int> signs(n_fcst - 1);
    double prev = y.segment(0, len).mean();
    for (int i = 1; i < n_fcst; ++i) {
        const double cur = y.segment(i * len, len).mean();
        const double diff = cur - prev;
        signs[i - 1] = diff > tau_shape ? 1 : (diff < -tau_shape ? -1 : 0);
        prev = cur;
    }
    return signs;
}

PrimitiveLabel classify_shape(std::span<const int> signs)
{
    detail::require(!signs.empty(), "classify_shape: empty sign sequence");
    enum : std::size_t { Ascend, Descend, Peak, Trough, Oscillate };
    int first = 0;
    int last = 0;
    int changes = 0;
    for (int s : signs) {
        if (s == 0) continue;
        if (first == 0) first = s;
        else if (s != last) ++changes;
        last = s;
    }
    std::size_t idx = Oscillate;  // all-zero and multi-reversal sequences
    if (first != 0 && changes == 0) idx = first > 0 ? Ascend : Descend;
    else if (changes == 1) idx = first > 0 ? Peak : Trough;
    return PrimitiveLabel(PrimitiveKind::Shape, idx);
}

LagProfile lag_profile(VecRef x, VecRef y, int n_fcst, double alpha, double eps)
{
    check_patching(y.size(), n_fcst);
    detail::require(x.size() >= 2, "lag_profile: L must be >= 2");
    const Eigen::Index len = y.size() / n_fcst;
    if (len < 2)
        throw InvalidArgument("lag_profile: forecast patch length " + std::to_string(len)
                              + " < 2; within-patch differences undefined");

    const double mx = x.mean();
    const double sx = std::max(population_std(x), eps);
    const double sdx = population_std(first_difference(x));

    Vector a(n_fcst);
    for (int i = 0; i < n_fcst; ++i) {
        const auto patch = y.segment(i * len, len);
        const double level = std::abs((patch.mean() - mx) / sx);
        const double spread = std::abs(std::log((population_std(first_difference(patch)) + eps)
                                                / (sdx + eps)));
        a[i] = level + alpha * spread;
    }

    LagProfile prof;
    const double total = a.sum();
    prof.pi = total < eps ? Vector::Constant(n_fcst, 1.0 / n_fcst) : Vector(a / total);
    for (int i = 0; i < n_fcst; ++i)
        prof.centroid += prof.pi[i] * static_cast<double>(i) / (n_fcst - 1);
    prof.argmax = 0;
    for (int i = 1; i < n_fcst; ++i) {
        if (prof.pi[i] > prof.pi[prof.argmax]) prof.argmax = i;
    }
    prof.peak = prof.pi[prof.argmax];
    prof.tail = prof.pi.tail(n_fcst - 1 - prof.argmax).sum();
    return prof;
}

PrimitiveLabel classify_lag(const LagProfile& p, double kappa1, double kappa2, double rho,
                            double eta)
{
    enum : std::size_t { EarlyFade, EarlyPersist, MidFade, MidPersist, Late, Diffuse };
    std::size_t idx;
    if (p.peak <= eta) idx = Diffuse;
    else if (p.centroid > kappa2) idx = Late;
    else if (p.centroid <= kappa1) idx = p.tail <= rho ? EarlyFade : EarlyPersist;
    else idx = p.tail <= rho ? MidFade : MidPersist;
    return PrimitiveLabel(PrimitiveKind::Lag, idx);
}

PrimitiveStats compute_stats(VecRef x, VecRef y, const ThresholdSet& thr)
{
    thr.validate_for_horizon(y.size());
    PrimitiveStats s;
    s.delta_mu = mean_shift_stat(x, y, thr.eps);
    s.r_sigma = volatility_stat(x, y, thr.eps);
    s.signs = shape_signs(y, thr.n_fcst, thr.tau_shape);
    s.lag = lag_profile(x, y, thr.n_fcst, thr.alpha, thr.eps);
    return s;
}

PrimitiveVector classify_stats(const PrimitiveStats& s, const ThresholdSet& thr)
{
    PrimitiveVector v;
    v.mean = classify_mean_shift(s.delta_mu, thr.tau1_mean, thr.tau2_mean);
    v.vol = classify_volatility(s.r_sigma, thr.tau1_vol, thr.tau2_vol);
    v.shape = classify_shape(s.signs);
    v.lag = classify_lag(s.lag, thr.kappa1, thr.kappa2, thr.rho, thr.eta);
    return v;
}

PrimitiveVector extract_all(VecRef x, VecRef y, const ThresholdSet& thr)
{
    return classify_stats(compute_stats(x, y, thr), thr);
}

} // namespace tess
