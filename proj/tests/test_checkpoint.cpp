#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "toy_data.hpp"
#include "tess/checkpoint.hpp"

using namespace tess;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("tess_test_" + name); }

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("raw checkpoint round trip is bit exact")
{
    Matrix a(2, 3);
    a << 1.0 / 3, -0.0, 1e-300, std::numeric_limits<double>::max(), -7.25, 0.1;
    const std::vector<NamedParameter> params = {{"a", ad::parameter(a)}, {"b", ad::parameter(Matrix::Constant(1, 1, 2))}};
    const fs::path p = temp("raw.bin");
    save_checkpoint(p, {{"note", "x"}}, params);
    const CheckpointData d = load_checkpoint(p);
    CHECK(d.header.at("note") == "x");
    REQUIRE(d.parameters.count("a") == 1);
    CHECK(std::memcmp(d.parameters.at("a").data(), a.data(), sizeof(double) * 6) == 0);
    CHECK(d.parameters.at("b")(0, 0) == 2);
    CHECK(slurp(p).substr(0, 8) == "TESSCKP1");
    fs::remove(p);
}

TEST_CASE("corrupt checkpoints are rejected")
{
    const fs::path p = temp("bad.bin");
    {
        std::ofstream out(p, std::ios::binary);
        out << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(p), ParseError);

    save_checkpoint(p, {}, {{"a", ad::parameter(Matrix::Ones(4, 4))}});
    const std::string full = slurp(p);
    {
        std::ofstream out(p, std::ios::binary);
        out << full.substr(0, full.size() - 8);
    }
    CHECK_THROWS_AS(load_checkpoint(p), ParseError);
    fs::remove(p);
    CHECK_THROWS(load_checkpoint(p));
}

TEST_CASE("forecaster save and load reproduce forecasts exactly")
{
    ModelConfig cfg = toy::tiny_config();
    ThresholdSet thr;
    const ForecastDataset d = toy::dataset(cfg, 20, 11, &thr);
    nn::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 5;
    for (const Ablation& ab : {Ablation::full(), Ablation::no_tess(), Ablation::drop(PrimitiveKind::Lag)}) {
        const TrainResult r = train(d, d, cfg, ab, tc);
        const fs::path p = temp("model.bin");
        save_forecaster(p, r.model, &thr);
        const LoadedForecaster back = load_forecaster(p);
        CHECK(back.model.ablation() == ab);
        REQUIRE(back.thresholds.has_value());
        CHECK(back.thresholds->tau2_mean == thr.tau2_mean);
        CHECK(back.thresholds->n_fcst == thr.n_fcst);
        for (std::size_t i = 0; i < d.size(); ++i)
            CHECK(forecast(back.model, d.windows[i], d.extractions[i]) == forecast(r.model, d.windows[i], d.extractions[i]));
        const auto pa = r.model.parameters(), pb = back.model.parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].first == pb[i].first);
            CHECK(pa[i].second.value() == pb[i].second.value());
        }
        fs::remove(p);
    }
}

TEST_CASE("threshold JSON uses flat field names")
{
    ThresholdSet t;
    t.tau1_mean = 0.3;
    const nlohmann::json j = t;
    CHECK(j.at("tau1_mean") == 0.3);
    CHECK(j.at("n_fcst") == 4);
    CHECK(j.get<ThresholdSet>().tau1_mean == 0.3);
}

TEST_CASE("atomic text writes leave no temp files")
{
    const fs::path dir = temp("atomic");
    fs::remove_all(dir);
    write_file_atomic(dir / "out.txt", "hello\n");
    write_file_atomic(dir / "out.txt", "again\n");
    CHECK(slurp(dir / "out.txt") == "again\n");
    CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}) == 1);
    fs::remove_all(dir);
}
