#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "tess/checkpoint.hpp"
#include "tess/harness.hpp"

namespace tess::harness {

void RunConfig::validate() const
{
    model.validate();
    if (dataset) {
        dataset->validate();
        if (dataset->L != model.L || dataset->H != model.H)
            throw InvalidArgument("run config: dataset L/H (" + std::to_string(dataset->L) + "/"
                                  + std::to_string(dataset->H) + ") differ from model L/H ("
                                  + std::to_string(model.L) + "/" + std::to_string(model.H) + ")");
    } else if (benchmark.L != model.L || benchmark.H != model.H) {
        throw InvalidArgument("run config: benchmark L/H (" + std::to_string(benchmark.L) + "/"
                              + std::to_string(benchmark.H) + ") differ from model L/H ("
                              + std::to_string(model.L) + "/" + std::to_string(model.H) + ")");
    }
    if (thresholds.n_fcst < 1 || model.H % thresholds.n_fcst != 0)
        throw InvalidArgument("run config: thresholds.n_fcst must divide H");
    if (train.epochs < 1 || train.batch_size < 1 || !(train.learning_rate > 0))
        throw InvalidArgument("run config: epochs, batch_size and learning_rate must be positive");
    if (!(extraction.temperature > 0)) throw InvalidArgument("run config: temperature must be > 0");
    if (!(extraction.delta_parse > 0 && extraction.delta_parse < 1))
        throw InvalidArgument("run config: delta_parse must lie in (0,1)");
    extraction.endpoint.validate();
    if (!(mock_error_rate >= 0 && mock_error_rate <= 1))
        throw InvalidArgument("run config: mock_error_rate must lie in [0,1]");
    for (const std::string& a : ablations) Ablation::parse(a);
    if (out_dir.empty()) throw InvalidArgument("run config: out_dir is empty");
}

RunConfig RunConfig::resolved() const
{
    RunConfig c = *this;
    if (seed) {
        c.model.seed = *seed;
        c.train.seed = *seed;
        c.benchmark.seed = *seed;
    }
    c.benchmark.thresholds = c.thresholds;
    return c;
}

void to_json(nlohmann::json& j, const RunConfig& c)
{
    j = {{"model", c.model},
         {"train", c.train},
         {"thresholds", c.thresholds},
         {"extraction", c.extraction},
         {"benchmark", c.benchmark},
         {"out_dir", c.out_dir.string()},
         {"mock_llm", c.mock_llm},
         {"oracle_labels", c.oracle_labels},
         {"mock_error_rate", c.mock_error_rate},
         {"ablations", c.ablations},
         {"diagnostic", c.diagnostic}};
    if (c.dataset) j["dataset"] = *c.dataset;
    if (c.seed) j["seed"] = *c.seed;
    if (c.cache_path) j["cache_path"] = c.cache_path->string();
}

void from_json(const nlohmann::json& j, RunConfig& c)
{
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<nn::TrainConfig>();
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<ThresholdConfig>();
    if (j.contains("extraction")) c.extraction = j.at("extraction").get<ExtractionConfig>();
    if (j.contains("benchmark")) c.benchmark = j.at("benchmark").get<bench::BenchmarkConfig>();
    if (j.contains("dataset") && !j.at("dataset").is_null()) c.dataset = j.at("dataset").get<DatasetManifest>();
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.mock_llm = j.value("mock_llm", c.mock_llm);
    c.oracle_labels = j.value("oracle_labels", c.oracle_labels);
    c.mock_error_rate = j.value("mock_error_rate", c.mock_error_rate);
    c.ablations = j.value("ablations", c.ablations);
    c.diagnostic = j.value("diagnostic", c.diagnostic);
    if (j.contains("cache_path") && !j.at("cache_path").is_null())
        c.cache_path = j.at("cache_path").get<std::string>();
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw Error("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(f).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& cfg)
{
    PreparedData d;
    if (!cfg.dataset) {
        bench::Benchmark b = bench::build_benchmark(cfg.benchmark);
        d.thresholds = b.thresholds;
        const std::array<const std::vector<bench::BenchmarkSample>*, 3> splits = {&b.train, &b.val, &b.test};
        for (std::size_t s = 0; s < 3; ++s)
            for (const bench::BenchmarkSample& sample : *splits[s]) {
                d.windows[s].push_back(sample.window);
                d.texts[s].push_back(sample.text.text());
            }
        d.benchmark = std::move(b);
        return d;
    }

    const DatasetManifest& m = *cfg.dataset;
    const TimeSeries series = load_series_csv(m.series_path, m.target_channel);
    const auto parts = chronological_split(series, m.train_fraction, m.val_fraction);
    std::vector<TextRecord> texts;
    if (m.text_path) texts = load_text_jsonl(*m.text_path).records;
    for (std::size_t s = 0; s < 3; ++s) {
        d.windows[s] = slide_windows(parts[s], m.L, m.H, m.step);
        d.texts[s] = texts.empty() ? std::vector<std::string>(d.windows[s].size())
                                   : align_text(d.windows[s], parts[s].timestamps(), texts);
    }
    d.thresholds = fit_thresholds(d.windows[Train], cfg.thresholds);
    return d;
}

ExtractionSummary run_extraction(const RunConfig& cfg, const PreparedData& data)
{
    ExtractionSummary out;
    if (data.benchmark && cfg.oracle_labels) {
        out.source = "oracle";
        const std::array<const std::vector<bench::BenchmarkSample>*, 3> splits = {
            &data.benchmark->train, &data.benchmark->val, &data.benchmark->test};
        for (std::size_t s = 0; s < 3; ++s)
            for (const bench::BenchmarkSample& sample : *splits[s])
                out.extractions[s].push_back(oracle_extraction(sample.truth, cfg.extraction.delta_parse));
        return out;
    }

    std::unique_ptr<CompletionBackend> backend;
    if (cfg.mock_llm)
        backend = std::make_unique<LexiconBackend>(bench::lexicon_from_templates(bench::default_template_bank()),
                                                   cfg.mock_error_rate);
    else
        backend = std::make_unique<HttpBackend>(cfg.extraction.endpoint);
    out.source = backend->id();

    ResponseCache cache(cfg.cache_path ? *cfg.cache_path : cfg.out_dir / "cache.jsonl");
    for (std::size_t s = 0; s < 3; ++s) {
        out.extractions[s] = extract_batch(*backend, &cache, data.texts[s], cfg.extraction);
        for (const Extraction& e : out.extractions[s])
            for (const auto& r : e.results) out.missing += r ? 0 : 1;
    }
    out.backend_calls = backend->calls();
    return out;
}

ForecastDataset split_dataset(const PreparedData& data, const ExtractionSummary& ex, Split split)
{
    return make_dataset(data.windows[split], ex.extractions[split], data.thresholds);
}

std::vector<MetricsRecord> evaluate_model(const PrefixForecaster& model, const ForecastDataset& test,
                                          const ThresholdSet& thresholds)
{
    const auto n = static_cast<Eigen::Index>(test.size());
    const Eigen::Index h = model.config().H;
    Matrix y_hat(n, h);
    Matrix y(n, h);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        y_hat.row(i) = forecast(model, test.windows[k], test.extractions[k]).transpose();
        y.row(i) = test.windows[k].y_fut->transpose();
    }
    const std::string name = model.ablation().display_name();
    std::vector<MetricsRecord> out{{name, "all", metrics(y_hat, y)}};
    const NonstationarySubsets subsets = nonstationary_subsets(test.windows, thresholds);
    for (SubsetKind k : {SubsetKind::ShapeTransition, SubsetKind::VolatilityChange, SubsetKind::MeanShift}) {
        const auto& idx = subsets[k];
        Matrix a(static_cast<Eigen::Index>(idx.size()), h);
        Matrix b(static_cast<Eigen::Index>(idx.size()), h);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            a.row(static_cast<Eigen::Index>(r)) = y_hat.row(static_cast<Eigen::Index>(idx[r]));
            b.row(static_cast<Eigen::Index>(r)) = y.row(static_cast<Eigen::Index>(idx[r]));
        }
        out.push_back({name, std::string(subset_name(k)), metrics(a, b)});
    }
    return out;
}

std::string focus_histogram_csv(const bench::DiagnosticReport& rep, int bins)
{
    detail::require(bins >= 1, "focus histogram: bins must be >= 1");
    std::vector<double> v;
    for (const bench::DiagnosticRow& r : rep.rows)
        if (std::isfinite(r.focus)) v.push_back(r.focus);
    std::string out = "bin_lo,bin_hi,count\n";
    if (v.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it;
    const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
    const double width = (hi - lo) / bins;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
        auto b = static_cast<std::size_t>((x - lo) / width);
        counts[std::min(b, counts.size() - 1)] += 1;
    }
    for (int b = 0; b < bins; ++b)
        out += fmt(lo + b * width) + "," + fmt(lo + (b + 1) * width) + ","
               + std::to_string(counts[static_cast<std::size_t>(b)]) + "\n";
    return out;
}

bench::DiagnosticReport run_diagnostic(const RunConfig& cfg, const bench::Benchmark& b)
{
    auto inputs = [](const std::vector<bench::BenchmarkSample>& samples) {
        std::vector<BaselineInput> out;
        for (const bench::BenchmarkSample& s : samples)
            out.push_back(bench::to_baseline_input(bench::make_variant(s, bench::Variant::Full), *s.window.y_fut));
        return out;
    };
    const BaselineFusionModel model = train_baseline(inputs(b.train), inputs(b.val), cfg.model, cfg.train);
    return bench::run_attention_diagnostic(model, b.test);
}

namespace {

std::string loss_curves_csv(const std::vector<std::pair<std::string, TrainReport>>& reports)
{
    std::string out = "model,epoch,train_forecast,train_gate,train_total,val_mse,best_val_mse\n";
    for (const auto& [name, r] : reports)
        for (std::size_t e = 0; e < r.epochs.size(); ++e) {
            const nn::EpochRecord& x = r.epochs[e];
            out += name + "," + std::to_string(e) + "," + fmt(x.train_forecast) + "," + fmt(x.train_gate) + ","
                   + fmt(x.train_total) + "," + fmt(x.val_loss) + "," + fmt(x.best_val_loss) + "\n";
        }
    return out;
}

std::string diagnostic_rows_csv(const bench::DiagnosticReport& rep)
{
    std::string out = "sample,n_redundant,n_sig,n_red,focus_ratio,mse_with_text,mse_without_text,gain\n";
    for (const bench::DiagnosticRow& r : rep.rows)
        out += std::to_string(r.sample) + "," + std::to_string(r.n_redundant) + "," + std::to_string(r.n_sig) + ","
               + std::to_string(r.n_red) + "," + fmt(r.focus) + "," + fmt(r.mse_with_text) + ","
               + fmt(r.mse_without_text) + "," + fmt(r.gain) + "\n";
    return out;
}

std::string redundancy_csv(const bench::DiagnosticReport& rep)
{
    std::string out = "n_redundant,count,mean_gain,mean_focus_ratio\n";
    for (const bench::RedundancyBucket& b : rep.by_redundancy)
        out += std::to_string(b.n_redundant) + "," + std::to_string(b.count) + "," + fmt(b.mean_gain) + ","
               + fmt(b.mean_focus) + "\n";
    return out;
}

} // namespace

ReportBundle run_experiment(const RunConfig& input)
{
    input.validate();
    const RunConfig cfg = input.resolved();
    std::filesystem::create_directories(cfg.out_dir);

    ReportBundle rep;
    nlohmann::json manifest = {{"config", cfg},
                               {"seeds",
                                {{"model", cfg.model.seed},
                                 {"train", cfg.train.seed},
                                 {"benchmark", cfg.benchmark.seed}}},
                               {"stages", nlohmann::json::array()}};
    auto emit = [&](const std::string& name, const std::string& contents) {
        const std::filesystem::path p = cfg.out_dir / name;
        write_file_atomic(p, contents);
        rep.files.push_back(p);
    };

    std::string stage = "fit-thresholds";
    try {
        const PreparedData data = prepare_data(cfg);
        emit("thresholds.json", nlohmann::json(data.thresholds).dump(2) + "\n");
        manifest["thresholds"] = data.thresholds;
        manifest["split_sizes"] = {data.windows[Train].size(), data.windows[Val].size(), data.windows[Test].size()};
        manifest["stages"].push_back(stage);

        stage = "extract";
        const ExtractionSummary ex = run_extraction(cfg, data);
        manifest["extraction"] = {{"source", ex.source}, {"missing", ex.missing}};
        manifest["stages"].push_back(stage);

        stage = "train";
        const ForecastDataset train_set = split_dataset(data, ex, Train);
        const ForecastDataset val_set = split_dataset(data, ex, Val);
        const ForecastDataset test_set = split_dataset(data, ex, Test);
        std::vector<Ablation> variants = {Ablation::full()};
        for (const std::string& a : cfg.ablations) {
            const Ablation ab = Ablation::parse(a);
            if (std::find(variants.begin(), variants.end(), ab) == variants.end()) variants.push_back(ab);
        }
        std::vector<TrainResult> trained;
        std::vector<std::pair<std::string, TrainReport>> reports;
        nlohmann::json train_reports;
        for (const Ablation& ab : variants) {
            trained.push_back(train(train_set, val_set, cfg.model, ab, cfg.train));
            reports.emplace_back(ab.name(), trained.back().report);
            train_reports[ab.name()] = trained.back().report;
        }
        const std::filesystem::path ckpt = cfg.out_dir / "checkpoint.bin";
        save_forecaster(ckpt, trained.front().model, &data.thresholds);
        rep.files.push_back(ckpt);
        manifest["checkpoint"] = ckpt.string();
        emit("loss_curves.csv", loss_curves_csv(reports));
        emit("train_report.json", train_reports.dump(2) + "\n");
        manifest["stages"].push_back(stage);

        stage = "evaluate";
        for (const TrainResult& t : trained) {
            const auto rows = evaluate_model(t.model, test_set, data.thresholds);
            rep.metrics.insert(rep.metrics.end(), rows.begin(), rows.end());
        }
        const NonstationarySubsets subsets = nonstationary_subsets(test_set.windows, data.thresholds);
        manifest["subset_sizes"] = {{"all", subsets.total},
                                    {"shape_transition", subsets.shape_transition.size()},
                                    {"volatility_change", subsets.volatility_change.size()},
                                    {"mean_shift", subsets.mean_shift.size()}};
        emit("metrics.csv", metrics_csv(rep.metrics));
        emit("metrics.json", metrics_json(rep.metrics).dump(2) + "\n");
        manifest["stages"].push_back(stage);

        if (cfg.diagnostic && data.benchmark) {
            stage = "diagnose";
            rep.diagnostic = run_diagnostic(cfg, *data.benchmark);
            emit("focus_ratios.csv", diagnostic_rows_csv(*rep.diagnostic));
            emit("rt_histogram.csv", focus_histogram_csv(*rep.diagnostic));
            emit("redundancy_gain.csv", redundancy_csv(*rep.diagnostic));
            manifest["diagnostic"] = {{"fraction_negative", rep.diagnostic->fraction_negative},
                                      {"mean_focus_ratio", rep.diagnostic->mean_focus},
                                      {"median_focus_ratio", rep.diagnostic->median_focus}};
            manifest["stages"].push_back(stage);
        }
        rep.ok = true;
    } catch (const std::exception& e) {
        rep.failed_stage = stage;
        rep.error = e.what();
    }

    manifest["status"] = rep.ok ? "ok" : "failed";
    if (!rep.ok) {
        manifest["failed_stage"] = rep.failed_stage;
        manifest["error"] = rep.error;
    }
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : rep.files) files.push_back(f.filename().string());
    manifest["files"] = files;
    emit("manifest.json", manifest.dump(2) + "\n");
    return rep;
}

} // namespace tess::harness
