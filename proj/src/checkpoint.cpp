#include "tess/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tess {

namespace {

template <class T>
T to_little(T v)
{
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

void put_u64(std::string& out, std::uint64_t v)
{
    v = to_little(v);
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_f64(std::string& out, double v)
{
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    put_u64(out, bits);
}

std::uint64_t get_u64(const std::string& in, std::size_t pos)
{
    std::uint64_t v;
    std::memcpy(&v, in.data() + pos, sizeof(v));
    return to_little(v);
}

} // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open " + tmp.string() + " for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<NamedParameter>& params)
{
    nlohmann::json index = nlohmann::json::array();
    std::string block;
    std::uint64_t offset = 0;
    for (const auto& [name, var] : params) {
        const Matrix& m = var.value();
        index.push_back({{"name", name},
                         {"rows", m.rows()},
                         {"cols", m.cols()},
                         {"offset", offset},
                         {"count", m.size()}});
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(block, m(r, c));
        offset += static_cast<std::uint64_t>(m.size());
    }
    header["format"] = "tess-checkpoint";
    header["version"] = 1;
    header["dtype"] = "float64-le";
    header["parameters"] = index;
    const std::string h = header.dump();

    std::string out(kCheckpointMagic, 8);
    put_u64(out, h.size());
    out += h;
    out += block;
    write_file_atomic(path, out);
}

CheckpointData load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string data = ss.str();
    if (data.size() < 16 || data.compare(0, 8, kCheckpointMagic) != 0)
        throw ParseError("checkpoint " + path.string() + ": bad magic");
    const std::uint64_t hlen = get_u64(data, 8);
    if (16 + hlen > data.size()) throw ParseError("checkpoint " + path.string() + ": truncated header");

    CheckpointData out;
    try {
        out.header = nlohmann::json::parse(data.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path.string() + ": header is not JSON (" + e.what() + ")");
    }
    const std::size_t base = 16 + hlen;
    for (const auto& p : out.header.at("parameters")) {
        const auto rows = p.at("rows").get<Eigen::Index>();
        const auto cols = p.at("cols").get<Eigen::Index>();
        const auto offset = p.at("offset").get<std::uint64_t>();
        if (base + (offset + static_cast<std::uint64_t>(rows * cols)) * 8 > data.size())
            throw ParseError("checkpoint " + path.string() + ": parameter block truncated");
        Matrix m(rows, cols);
        std::size_t pos = base + offset * 8;
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c, pos += 8)
                m(r, c) = std::bit_cast<double>(get_u64(data, pos));
        out.parameters.emplace(p.at("name").get<std::string>(), std::move(m));
    }
    return out;
}

void to_json(nlohmann::json& j, const ThresholdSet& t)
{
    j = {{"tau1_mean", t.tau1_mean}, {"tau2_mean", t.tau2_mean}, {"tau1_vol", t.tau1_vol},
         {"tau2_vol", t.tau2_vol},   {"tau_shape", t.tau_shape}, {"kappa1", t.kappa1},
         {"kappa2", t.kappa2},       {"rho", t.rho},             {"eta", t.eta},
         {"alpha", t.alpha},         {"eps", t.eps},             {"n_fcst", t.n_fcst}};
}

void from_json(const nlohmann::json& j, ThresholdSet& t)
{
    t.tau1_mean = j.at("tau1_mean").get<double>();
    t.tau2_mean = j.at("tau2_mean").get<double>();
    t.tau1_vol = j.at("tau1_vol").get<double>();
    t.tau2_vol = j.at("tau2_vol").get<double>();
    t.tau_shape = j.at("tau_shape").get<double>();
    t.kappa1 = j.value("kappa1", t.kappa1);
    t.kappa2 = j.value("kappa2", t.kappa2);
    t.rho = j.value("rho", t.rho);
    t.eta = j.value("eta", t.eta);
    t.alpha = j.value("alpha", t.alpha);
    t.eps = j.value("eps", t.eps);
    t.n_fcst = j.value("n_fcst", t.n_fcst);
    t.validate();
}

void save_forecaster(const std::filesystem::path& path, const PrefixForecaster& model,
                     const ThresholdSet* thresholds)
{
    nlohmann::json header = {{"model", "prefix-forecaster"},
                             {"config", model.config()},
                             {"ablation", model.ablation().name()},
                             {"seed", model.config().seed}};
    if (thresholds) header["thresholds"] = *thresholds;
    save_checkpoint(path, std::move(header), model.parameters());
}

LoadedForecaster load_forecaster(const std::filesystem::path& path)
{
    CheckpointData data = load_checkpoint(path);
    const ModelConfig cfg = data.header.at("config").get<ModelConfig>();
    LoadedForecaster out{PrefixForecaster(cfg, Ablation::parse(data.header.at("ablation").get<std::string>())),
                         std::nullopt};
    for (auto& [name, var] : out.model.parameters()) {
        auto it = data.parameters.find(name);
        if (it == data.parameters.end())
            throw ParseError("checkpoint " + path.string() + ": missing parameter '" + name + "'");
        if (it->second.rows() != var.rows() || it->second.cols() != var.cols())
            throw ParseError("checkpoint " + path.string() + ": shape mismatch for '" + name + "'");
        ad::Var v = var;
        v.mutable_value() = it->second;
    }
    if (data.header.contains("thresholds"))
        out.thresholds = data.header.at("thresholds").get<ThresholdSet>();
    return out;
}

} // namespace tess
