#include "tess/series.hpp"

#include <cmath>
#include <sstream>

namespace tess {

PatchGrid PatchGrid::make(int input_length, int patch_length, int stride)
{
    if (patch_length < 1 || patch_length > input_length) {
        std::ostringstream msg;
        msg << "patch length " << patch_length << " must lie in [1, " << input_length << "]";
        throw InvalidArgument(msg.str());
    }
    detail::require(stride >= 1, "patch stride must be >= 1");
    return PatchGrid{patch_length, stride, (input_length - patch_length) / stride + 1};
}

TimeSeries::TimeSeries(std::vector<std::int64_t> timestamps, Matrix values,
                       std::vector<std::string> channel_names, int target_channel)
  : m_timestamps(std::move(timestamps)),
    m_values(std::move(values)),
    m_channel_names(std::move(channel_names)),
    m_target_channel(target_channel)
{
    detail::require(static_cast<Eigen::Index>(m_timestamps.size()) == m_values.rows(),
                    "TimeSeries: timestamp count does not match value rows");
    detail::require(static_cast<Eigen::Index>(m_channel_names.size()) == m_values.cols(),
                    "TimeSeries: channel name count does not match value columns");
    detail::require(target_channel >= 0 && target_channel < m_values.cols(),
                    "TimeSeries: target channel out of range");
    for (std::size_t i = 1; i < m_timestamps.size(); ++i) {
        if (m_timestamps[i] <= m_timestamps[i - 1])
            throw InvalidArgument("TimeSeries: timestamps not strictly increasing at row "
                                  + std::to_string(i));
    }
}

TimeSeries TimeSeries::from_values(const Vector& values, std::int64_t start, std::int64_t step,
                                   std::string name)
{
    std::vector<std::int64_t> ts(values.size());
    for (std::size_t i = 0; i < ts.size(); ++i)
        ts[i] = start + static_cast<std::int64_t>(i) * step;
    return TimeSeries(std::move(ts), Matrix(values), {std::move(name)}, 0);
}

std::vector<Window> slide_windows(const TimeSeries& series, int obs_length, int horizon,
                                  int step, bool keep_covariates)
{
    detail::require(obs_length >= 2, "slide_windows: L must be >= 2");
    detail::require(horizon >= 0, "slide_windows: H must be >= 0");
    detail::require(step >= 1, "slide_windows: step must be >= 1");
    const Eigen::Index total = series.length();
    const Eigen::Index need = obs_length + horizon;
    if (total < need) {
        std::ostringstream msg;
        msg << "slide_windows: insufficient length " << total << ", required minimum " << need;
        throw InvalidArgument(msg.str());
    }

    const Vector target = series.target();
    const Eigen::Index count = (total - need) / step + 1;
    std::vector<Window> out;
    out.reserve(count);
    for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index origin = k * step;
        Window w;
        w.origin_index = origin;
        w.x_obs = target.segment(origin, obs_length);
        if (horizon > 0) w.y_fut = target.segment(origin + obs_length, horizon);
        if (keep_covariates) w.raw_covariates = series.values().middleRows(origin, obs_length);
        out.push_back(std::move(w));
    }
    return out;
}

TimeSeries slice(const TimeSeries& series, Eigen::Index begin, Eigen::Index count)
{
    detail::require(begin >= 0 && count >= 1 && begin + count <= series.length(), "slice: range out of bounds");
    std::vector<std::int64_t> ts(series.timestamps().begin() + begin,
                                 series.timestamps().begin() + begin + count);
    return TimeSeries(std::move(ts), series.values().middleRows(begin, count), series.channel_names(),
                      series.target_channel());
}

std::array<TimeSeries, 3> chronological_split(const TimeSeries& series, double train_fraction,
                                              double val_fraction)
{
    if (!(train_fraction > 0 && val_fraction > 0 && train_fraction + val_fraction < 1))
        throw InvalidArgument("chronological_split: fractions must be positive and sum to less than 1");
    const Eigen::Index n = series.length();
    const auto n_train = static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<Eigen::Index>(std::floor(val_fraction * static_cast<double>(n)));
    const Eigen::Index n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw InvalidArgument("chronological_split: series of length " + std::to_string(n)
                              + " is too short to split");
    return {slice(series, 0, n_train), slice(series, n_train, n_val), slice(series, n_train + n_val, n_test)};
}

} // namespace tess
