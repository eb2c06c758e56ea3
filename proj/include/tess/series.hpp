#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tess/error.hpp"

namespace tess {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kDefaultNormEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// Scalar statistics over Eigen expressions. Population moments (divide by n).
// ---------------------------------------------------------------------------

template <typename Derived>
typename Derived::Scalar mean(const Eigen::MatrixBase<Derived>& v)
{
    return v.mean();
}

template <typename Derived>
typename Derived::Scalar population_std(const Eigen::MatrixBase<Derived>& v)
{
    using Scalar = typename Derived::Scalar;
    const Scalar m = v.mean();
    return std::sqrt((v.array() - m).square().mean());
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v)
{
    return v.allFinite();
}

/// v[i+1] - v[i].
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
first_difference(const Eigen::MatrixBase<Derived>& v)
{
    detail::require(v.size() >= 2, "first_difference: need at least 2 values, got "
                                       + std::to_string(v.size()));
    const Eigen::Index n = v.size();
    return v.tail(n - 1) - v.head(n - 1);
}

template <typename Scalar>
struct NormStatsT {
    Scalar mu{0};
    Scalar s{1};
};
using NormStats = NormStatsT<double>;

template <typename Scalar>
struct NormalizedT {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;
    NormStatsT<Scalar> stats;
};
using Normalized = NormalizedT<double>;

/// Per-instance standardization: (x - mean) / max(std, eps). Constant input
/// maps to zeros with s = eps.
template <typename Derived>
NormalizedT<typename Derived::Scalar>
instance_normalize(const Eigen::MatrixBase<Derived>& x,
                   typename Derived::Scalar eps = kDefaultNormEpsilon)
{
    using Scalar = typename Derived::Scalar;
    detail::require(x.size() >= 2, "instance_normalize: need at least 2 values");
    detail::require(eps > Scalar(0), "instance_normalize: eps must be positive");
    if (!x.allFinite()) throw InvalidArgument("instance_normalize: non-finite input");
    NormalizedT<Scalar> out;
    out.stats.mu = x.mean();
    out.stats.s = std::max(population_std(x), eps);
    out.values = (x.array() - out.stats.mu) / out.stats.s;
    return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
inverse_normalize(const Eigen::MatrixBase<Derived>& x_norm,
                  const NormStatsT<typename Derived::Scalar>& stats)
{
    if (!x_norm.allFinite()) throw InvalidArgument("inverse_normalize: non-finite input");
    return (stats.s * x_norm.array() + stats.mu).matrix();
}

struct PatchGrid {
    int length = 0;  // P
    int stride = 0;  // S
    int count = 0;   // N

    static PatchGrid make(int input_length, int patch_length, int stride);
};

/// Rows are consecutive patches x[i*S, i*S + P). Trailing samples that do
/// not fill a patch are dropped.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
patchify(const Eigen::MatrixBase<Derived>& x, int patch_length, int stride)
{
    const PatchGrid grid = PatchGrid::make(static_cast<int>(x.size()), patch_length, stride);
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(grid.count,
                                                                                grid.length);
    for (int i = 0; i < grid.count; ++i)
        out.row(i) = x.segment(static_cast<Eigen::Index>(i) * stride, patch_length).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

/// Multichannel series; rows are time steps. Timestamps are epoch seconds.
class TimeSeries {
public:
    TimeSeries() = default;
    TimeSeries(std::vector<std::int64_t> timestamps, Matrix values,
               std::vector<std::string> channel_names, int target_channel = 0);

    /// Single-channel convenience constructor with unit-spaced timestamps.
    static TimeSeries from_values(const Vector& values, std::int64_t start = 0,
                                  std::int64_t step = 1, std::string name = "value");

    Eigen::Index length() const { return m_values.rows(); }
    Eigen::Index channels() const { return m_values.cols(); }
    const std::vector<std::int64_t>& timestamps() const { return m_timestamps; }
    const Matrix& values() const { return m_values; }
    const std::vector<std::string>& channel_names() const { return m_channel_names; }
    int target_channel() const { return m_target_channel; }
    Vector target() const { return m_values.col(m_target_channel); }

private:
    std::vector<std::int64_t> m_timestamps;
    Matrix m_values;
    std::vector<std::string> m_channel_names;
    int m_target_channel = 0;
};

struct Window {
    Vector x_obs;
    std::optional<Vector> y_fut;
    Eigen::Index origin_index = 0;
    std::optional<Matrix> raw_covariates;

    Eigen::Index observation_length() const { return x_obs.size(); }
    Eigen::Index horizon() const { return y_fut ? y_fut->size() : 0; }
};

/// Windows at origins 0, step, 2*step, ... over the target channel.
/// Throws InvalidArgument ("insufficient length") when the series is shorter
/// than L + H.
std::vector<Window> slide_windows(const TimeSeries& series, int obs_length, int horizon,
                                  int step, bool keep_covariates = false);

/// Contiguous train/validation/test slices of a series. Fractions must be
/// positive; the test slice takes what is left.
std::array<TimeSeries, 3> chronological_split(const TimeSeries& series, double train_fraction,
                                              double val_fraction);

/// Rows [begin, begin + count) as a new series.
TimeSeries slice(const TimeSeries& series, Eigen::Index begin, Eigen::Index count);

} // namespace tess
