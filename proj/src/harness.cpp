#include "tess/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tess {

void to_json(nlohmann::json& j, const ThresholdConfig& c)
{
    j = {{"q1", c.q1},         {"q2", c.q2},         {"shape_factor", c.shape_factor},
         {"kappa1", c.kappa1}, {"kappa2", c.kappa2}, {"rho", c.rho},
         {"eta_factor", c.eta_factor}, {"alpha", c.alpha}, {"eps", c.eps},
         {"n_fcst", c.n_fcst}, {"min_windows", c.min_windows}};
}

void from_json(const nlohmann::json& j, ThresholdConfig& c)
{
    c.q1 = j.value("q1", c.q1);
    c.q2 = j.value("q2", c.q2);
    c.shape_factor = j.value("shape_factor", c.shape_factor);
    c.kappa1 = j.value("kappa1", c.kappa1);
    c.kappa2 = j.value("kappa2", c.kappa2);
    c.rho = j.value("rho", c.rho);
    c.eta_factor = j.value("eta_factor", c.eta_factor);
    c.alpha = j.value("alpha", c.alpha);
    c.eps = j.value("eps", c.eps);
    c.n_fcst = j.value("n_fcst", c.n_fcst);
    c.min_windows = j.value("min_windows", c.min_windows);
}

} // namespace tess

namespace tess::harness {

namespace {

std::string trim(std::string_view s)
{
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

bool parse_int(std::string_view s, int& out)
{
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::optional<double> parse_double(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) return std::nullopt;
    return v;
}

} // namespace

void DatasetManifest::validate() const
{
    if (series_path.empty()) throw InvalidArgument("manifest: series_path is required");
    if (!(train_fraction > 0 && val_fraction > 0 && test_fraction > 0))
        throw InvalidArgument("manifest: split fractions must be positive");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw InvalidArgument("manifest: split fractions must sum to 1");
    if (L < 2 || H < 1 || step < 1) throw InvalidArgument("manifest: need L >= 2, H >= 1, step >= 1");
}

void to_json(nlohmann::json& j, const DatasetManifest& m)
{
    j = {{"series_path", m.series_path.string()},
         {"target_channel", m.target_channel},
         {"train_fraction", m.train_fraction},
         {"val_fraction", m.val_fraction},
         {"test_fraction", m.test_fraction},
         {"L", m.L},
         {"H", m.H},
         {"step", m.step}};
    if (m.text_path) j["text_path"] = m.text_path->string();
}

void from_json(const nlohmann::json& j, DatasetManifest& m)
{
    m.series_path = j.at("series_path").get<std::string>();
    if (j.contains("text_path") && !j.at("text_path").is_null())
        m.text_path = j.at("text_path").get<std::string>();
    m.target_channel = j.value("target_channel", m.target_channel);
    m.train_fraction = j.value("train_fraction", m.train_fraction);
    m.val_fraction = j.value("val_fraction", m.val_fraction);
    m.test_fraction = j.value("test_fraction", m.test_fraction);
    m.L = j.value("L", m.L);
    m.H = j.value("H", m.H);
    m.step = j.value("step", m.step);
}

std::int64_t parse_timestamp(std::string_view raw)
{
    const std::string s = trim(raw);
    if (s.empty()) throw ParseError("empty timestamp");
    {
        std::int64_t v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec == std::errc() && r.ptr == s.data() + s.size()) return v;
    }
    auto bad = [&] { return ParseError("unparseable timestamp '" + s + "'"); };
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw bad();
    int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
    if (!parse_int(std::string_view(s).substr(0, 4), y) || !parse_int(std::string_view(s).substr(5, 2), mo)
        || !parse_int(std::string_view(s).substr(8, 2), d))
        throw bad();
    std::string_view rest = std::string_view(s).substr(10);
    if (!rest.empty()) {
        if (rest.front() != 'T' && rest.front() != ' ') throw bad();
        rest.remove_prefix(1);
        if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
        if (rest.size() != 5 && rest.size() != 8) throw bad();
        if (rest[2] != ':' || !parse_int(rest.substr(0, 2), hh) || !parse_int(rest.substr(3, 2), mm)) throw bad();
        if (rest.size() == 8 && (rest[5] != ':' || !parse_int(rest.substr(6, 2), ss))) throw bad();
        if (hh > 23 || mm > 59 || ss > 60) throw bad();
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw bad();
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
}

TimeSeries load_series_csv(const std::filesystem::path& path, const std::string& target_channel)
{
    std::ifstream f(path);
    if (!f) throw Error("cannot open series file " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path.string() + ": missing header row");
    const std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 2) throw ParseError(path.string() + ": need a timestamp column and at least one channel");
    const std::vector<std::string> channels(header.begin() + 1, header.end());

    int target = 0;
    if (!target_channel.empty()) {
        const auto it = std::find(channels.begin(), channels.end(), target_channel);
        if (it == channels.end()) throw InvalidArgument(path.string() + ": no channel named '" + target_channel + "'");
        target = static_cast<int>(it - channels.begin());
    }

    std::vector<std::int64_t> ts;
    std::vector<std::vector<double>> rows;
    std::size_t row = 1;
    while (std::getline(f, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size())
                             + " cells, expected " + std::to_string(header.size()));
        try {
            ts.push_back(parse_timestamp(cells[0]));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ": row " + std::to_string(row) + ", column 1: " + e.what());
        }
        if (ts.size() > 1 && ts.back() <= ts[ts.size() - 2])
            throw ParseError(path.string() + ": row " + std::to_string(row) + ": timestamp "
                             + (ts.back() == ts[ts.size() - 2] ? "duplicates" : "precedes")
                             + " the previous row");
        std::vector<double> values;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            const auto v = parse_double(cells[c]);
            if (!v)
                throw ParseError(path.string() + ": row " + std::to_string(row) + ", column "
                                 + std::to_string(c + 1) + ": unparseable cell '" + cells[c] + "'");
            values.push_back(*v);
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ParseError(path.string() + ": no data rows");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(channels.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < channels.size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return TimeSeries(std::move(ts), std::move(m), channels, target);
}

TextLoadResult load_text_jsonl(const std::filesystem::path& path, bool strict)
{
    std::ifstream f(path);
    if (!f) throw Error("cannot open text file " + path.string());
    TextLoadResult out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::string problem;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            if (!j.is_object()) {
                problem = "not a JSON object";
            } else if (!j.contains("timestamp")) {
                problem = "missing \"timestamp\" field";
            } else if (!j.contains("text") || !j.at("text").is_string()) {
                problem = "missing \"text\" field";
            } else {
                const auto& t = j.at("timestamp");
                TextRecord rec;
                rec.timestamp = t.is_number_integer() ? t.get<std::int64_t>() : parse_timestamp(t.get<std::string>());
                rec.text = j.at("text").get<std::string>();
                out.records.push_back(std::move(rec));
            }
        } catch (const std::exception& e) {
            problem = e.what();
        }
        if (!problem.empty()) {
            const std::string msg = "line " + std::to_string(lineno) + ": " + problem;
            if (strict) throw ParseError(path.string() + ": " + msg);
            out.errors.push_back(msg);
        }
    }
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const TextRecord& a, const TextRecord& b) { return a.timestamp < b.timestamp; });
    return out;
}

std::vector<std::vector<std::size_t>> assign_texts(std::span<const Window> windows,
                                                   const std::vector<std::int64_t>& timestamps,
                                                   std::span<const TextRecord> texts)
{
    std::vector<std::vector<std::size_t>> out;
    out.reserve(windows.size());
    auto by_time = [](const TextRecord& r, std::int64_t t) { return r.timestamp < t; };
    for (const Window& w : windows) {
        const auto first = static_cast<std::size_t>(w.origin_index);
        const std::size_t last = first + static_cast<std::size_t>(w.x_obs.size()) - 1;
        detail::require(last < timestamps.size(), "align_text: window exceeds the timestamp range");
        auto it = std::lower_bound(texts.begin(), texts.end(), timestamps[first], by_time);
        std::vector<std::size_t> idx;
        for (; it != texts.end() && it->timestamp <= timestamps[last]; ++it)
            idx.push_back(static_cast<std::size_t>(it - texts.begin()));
        out.push_back(std::move(idx));
    }
    return out;
}

std::vector<std::string> align_text(std::span<const Window> windows, const std::vector<std::int64_t>& timestamps,
                                    std::span<const TextRecord> texts)
{
    const auto assignments = assign_texts(windows, timestamps, texts);
    audit_no_lookahead(windows, timestamps, texts, assignments);
    std::vector<std::string> out;
    out.reserve(windows.size());
    for (const auto& idx : assignments) {
        std::string joined;
        for (std::size_t i : idx) {
            if (!joined.empty()) joined += ' ';
            joined += texts[i].text;
        }
        out.push_back(std::move(joined));
    }
    return out;
}

void audit_no_lookahead(std::span<const Window> windows, const std::vector<std::int64_t>& timestamps,
                        std::span<const TextRecord> texts,
                        const std::vector<std::vector<std::size_t>>& assignments)
{
    detail::require(windows.size() == assignments.size(), "audit: windows and assignments differ in length");
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto first = static_cast<std::size_t>(windows[w].origin_index);
        const std::int64_t hi = timestamps[first + static_cast<std::size_t>(windows[w].x_obs.size()) - 1];
        for (std::size_t i : assignments[w]) {
            detail::require(i < texts.size(), "audit: text index out of range");
            if (texts[i].timestamp > hi)
                throw Error("no-lookahead audit: window " + std::to_string(w) + " received text stamped "
                            + std::to_string(texts[i].timestamp) + " after its last observation "
                            + std::to_string(hi));
        }
    }
}

MetricsRow metrics(const Matrix& y_hat, const Matrix& y)
{
    if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
        throw InvalidArgument("metrics: shape mismatch " + std::to_string(y_hat.rows()) + "x"
                              + std::to_string(y_hat.cols()) + " vs " + std::to_string(y.rows()) + "x"
                              + std::to_string(y.cols()));
    MetricsRow r;
    r.count = static_cast<std::size_t>(y.rows());
    if (y.size() == 0) return r;
    const Eigen::ArrayXXd diff = (y_hat - y).array();
    r.mae = diff.abs().mean();
    r.mse = diff.square().mean();
    r.rmse = std::sqrt(r.mse);
    return r;
}

std::string_view subset_name(SubsetKind k)
{
    switch (k) {
    case SubsetKind::MeanShift: return "mean_shift";
    case SubsetKind::VolatilityChange: return "volatility_change";
    case SubsetKind::ShapeTransition: return "shape_transition";
    }
    return "mean_shift";
}

const std::vector<std::size_t>& NonstationarySubsets::operator[](SubsetKind k) const
{
    switch (k) {
    case SubsetKind::MeanShift: return mean_shift;
    case SubsetKind::VolatilityChange: return volatility_change;
    case SubsetKind::ShapeTransition: return shape_transition;
    }
    return mean_shift;
}

NonstationarySubsets nonstationary_subsets(std::span<const Window> windows, const ThresholdSet& thr)
{
    NonstationarySubsets out;
    out.total = windows.size();
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const Window& w = windows[i];
        detail::require(w.y_fut.has_value(), "nonstationary_subsets: window without forecast segment");
        if (std::abs(mean_shift_stat(w.x_obs, *w.y_fut, thr.eps)) > thr.tau2_mean) out.mean_shift.push_back(i);
        if (std::abs(volatility_stat(w.x_obs, *w.y_fut, thr.eps)) > thr.tau2_vol) out.volatility_change.push_back(i);
        const PrimitiveLabel shape = classify_shape(shape_signs(*w.y_fut, thr.n_fcst, thr.tau_shape));
        const auto n = shape.name();
        if (n == "peak" || n == "trough" || n == "oscillate") out.shape_transition.push_back(i);
    }
    return out;
}

std::string fmt(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string metrics_csv(std::span<const MetricsRecord> rows)
{
    std::string out = "model,subset,count,mae,mse,rmse\n";
    for (const MetricsRecord& r : rows)
        out += r.model + "," + r.subset + "," + std::to_string(r.row.count) + "," + fmt(r.row.mae) + ","
               + fmt(r.row.mse) + "," + fmt(r.row.rmse) + "\n";
    return out;
}

nlohmann::json metrics_json(std::span<const MetricsRecord> rows)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const MetricsRecord& r : rows)
        arr.push_back({{"model", r.model},
                       {"subset", r.subset},
                       {"count", r.row.count},
                       {"mae", r.row.mae},
                       {"mse", r.row.mse},
                       {"rmse", r.row.rmse}});
    return arr;
}

} // namespace tess::harness
