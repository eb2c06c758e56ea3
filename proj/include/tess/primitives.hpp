#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tess/series.hpp"

namespace tess {

enum class PrimitiveKind : std::uint8_t { MeanShift = 0, Volatility = 1, Shape = 2, Lag = 3 };

inline constexpr std::size_t kNumKinds = 4;
inline constexpr std::array<PrimitiveKind, kNumKinds> kAllKinds = {
    PrimitiveKind::MeanShift, PrimitiveKind::Volatility, PrimitiveKind::Shape,
    PrimitiveKind::Lag};

constexpr std::size_t index_of(PrimitiveKind k) { return static_cast<std::size_t>(k); }

/// Candidate names in prompt-template order.
std::span<const std::string_view> candidates(PrimitiveKind kind);
std::size_t candidate_count(PrimitiveKind kind);

/// Output-line key used in the extraction prompt: "Mean Shift", "Volatility", ...
std::string_view output_key(PrimitiveKind kind);
/// Identifier used in JSON files: "mean_shift", "volatility", "shape", "lag".
std::string_view kind_slug(PrimitiveKind kind);
PrimitiveKind kind_from_slug(std::string_view slug);

/// A category of one primitive, stored as its index into candidates(kind).
class PrimitiveLabel {
public:
    PrimitiveLabel() = default;
    PrimitiveLabel(PrimitiveKind kind, std::size_t index);

    /// Case-insensitive lookup; throws ParseError on out-of-domain names.
    static PrimitiveLabel parse(PrimitiveKind kind, std::string_view name);

    PrimitiveKind kind() const { return m_kind; }
    std::size_t index() const { return m_index; }
    std::string_view name() const { return candidates(m_kind)[m_index]; }

    friend bool operator==(const PrimitiveLabel&, const PrimitiveLabel&) = default;

private:
    PrimitiveKind m_kind = PrimitiveKind::MeanShift;
    std::size_t m_index = 0;
};

/// Ground-truth labels for one window pair, in (mean, vol, shape, lag) order.
struct PrimitiveVector {
    PrimitiveLabel mean{PrimitiveKind::MeanShift, 2};
    PrimitiveLabel vol{PrimitiveKind::Volatility, 2};
    PrimitiveLabel shape{PrimitiveKind::Shape, 4};
    PrimitiveLabel lag{PrimitiveKind::Lag, 5};

    const PrimitiveLabel& operator[](PrimitiveKind k) const;
    PrimitiveLabel& operator[](PrimitiveKind k);

    friend bool operator==(const PrimitiveVector&, const PrimitiveVector&) = default;
};

struct ThresholdSet {
    double tau1_mean = 0.5;
    double tau2_mean = 1.0;
    double tau1_vol = 0.2;
    double tau2_vol = 0.5;
    double tau_shape = 0.1;
    double kappa1 = 1.0 / 3.0;
    double kappa2 = 2.0 / 3.0;
    double rho = 0.4;
    double eta = 1.5 / 4.0;
    double alpha = 0.5;
    double eps = 1e-8;
    int n_fcst = 4;

    /// Throws InvalidArgument naming the first violated ordering constraint.
    void validate() const;
    /// Additionally checks that n_fcst divides the horizon.
    void validate_for_horizon(Eigen::Index horizon) const;
};

struct ThresholdConfig {
    double q1 = 0.60;
    double q2 = 0.85;
    double shape_factor = 0.25;
    double kappa1 = 1.0 / 3.0;
    double kappa2 = 2.0 / 3.0;
    double rho = 0.4;
    double eta_factor = 1.5;  // eta = eta_factor / n_fcst
    double alpha = 0.5;
    double eps = 1e-8;
    int n_fcst = 4;
    std::size_t min_windows = 50;
};

struct LagProfile {
    Vector pi;
    double centroid = 0;  // c
    double tail = 0;      // d
    double peak = 0;      // q
    Eigen::Index argmax = 0;
};

/// Continuous statistics behind the four labels.
struct PrimitiveStats {
    double delta_mu = 0;
    double r_sigma = 0;
    std::vector<int> signs;
    LagProfile lag;
};

using VecRef = Eigen::Ref<const Vector>;

/// Linear-interpolation sample quantile (type 7): h = (n-1)p.
double sample_quantile(std::vector<double> values, double p);

ThresholdSet fit_thresholds(std::span<const Window> train_windows,
                            const ThresholdConfig& cfg = {});

double mean_shift_stat(VecRef x, VecRef y, double eps = 1e-8);
PrimitiveLabel classify_mean_shift(double delta_mu, double tau1, double tau2);

double volatility_stat(VecRef x, VecRef y, double eps = 1e-8);
PrimitiveLabel classify_volatility(double r_sigma, double tau1, double tau2);

std::vector<int> shape_signs(VecRef y, int n_fcst, double tau_shape);
PrimitiveLabel classify_shape(std::span<const int> signs);

LagProfile lag_profile(VecRef x, VecRef y, int n_fcst, double alpha, double eps = 1e-8);
PrimitiveLabel classify_lag(const LagProfile& profile, double kappa1, double kappa2, double rho,
                            double eta);

PrimitiveStats compute_stats(VecRef x, VecRef y, const ThresholdSet& thr);
PrimitiveVector classify_stats(const PrimitiveStats& stats, const ThresholdSet& thr);

/// The ground-truth map: all four statistics, discretized.
PrimitiveVector extract_all(VecRef x, VecRef y, const ThresholdSet& thr);

} // namespace tess
