#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "tess/checkpoint.hpp"
#include "tess/harness.hpp"

using namespace tess;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool mock_llm = false;
    std::optional<int> epochs;
};

harness::RunConfig load(const Globals& g)
{
    harness::RunConfig cfg = g.config.empty() ? harness::RunConfig{} : harness::load_run_config(g.config);
    if (g.seed) cfg.seed = g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    if (g.mock_llm) cfg.mock_llm = true;
    if (g.epochs) cfg.train.epochs = *g.epochs;
    cfg.validate();
    return cfg.resolved();
}

void write(const fs::path& p, const std::string& s)
{
    write_file_atomic(p, s);
    std::cout << "wrote " << p.string() << "\n";
}

void print_metrics(const std::vector<harness::MetricsRecord>& rows)
{
    std::printf("%-16s %-18s %6s %10s %10s %10s\n", "model", "subset", "n", "MAE", "MSE", "RMSE");
    for (const auto& r : rows)
        std::printf("%-16s %-18s %6zu %10.4f %10.4f %10.4f\n", r.model.c_str(), r.subset.c_str(), r.row.count,
                    r.row.mae, r.row.mse, r.row.rmse);
}

int cmd_fit_thresholds(const Globals& g)
{
    const auto cfg = load(g);
    const auto data = harness::prepare_data(cfg);
    write(cfg.out_dir / "thresholds.json", nlohmann::json(data.thresholds).dump(2) + "\n");
    std::cout << nlohmann::json(data.thresholds).dump(2) << "\n";
    return 0;
}

int cmd_extract(const Globals& g, bool oracle)
{
    auto cfg = load(g);
    cfg.oracle_labels = oracle;
    const auto data = harness::prepare_data(cfg);
    const auto ex = harness::run_extraction(cfg, data);
    std::string out;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < ex.extractions[s].size(); ++i)
            out += nlohmann::json{{"split", harness::kSplitNames[s]},
                                  {"index", i},
                                  {"origin", data.windows[s][i].origin_index},
                                  {"extraction", ex.extractions[s][i]}}
                       .dump()
                   + "\n";
    write(cfg.out_dir / "extractions.jsonl", out);
    std::cout << "source " << ex.source << ", backend calls " << ex.backend_calls << ", missing primitives "
              << ex.missing << "\n";
    return 0;
}

int cmd_bench(const Globals& g)
{
    const auto cfg = load(g);
    const bench::Benchmark b = bench::build_benchmark(cfg.benchmark);
    const fs::path dir = cfg.out_dir / "bench";
    bench::save_split(dir / "train.jsonl", b.train);
    bench::save_split(dir / "val.jsonl", b.val);
    bench::save_split(dir / "test.jsonl", b.test);
    write(dir / "thresholds.json", nlohmann::json(b.thresholds).dump(2) + "\n");
    std::cout << "train " << b.train.size() << ", val " << b.val.size() << ", test " << b.test.size()
              << " samples in " << dir.string() << "\n";
    return 0;
}

int cmd_train(const Globals& g, const std::string& ablation)
{
    const auto cfg = load(g);
    const Ablation ab = Ablation::parse(ablation);
    const auto data = harness::prepare_data(cfg);
    const auto ex = harness::run_extraction(cfg, data);
    const TrainResult r = train(harness::split_dataset(data, ex, harness::Train),
                                harness::split_dataset(data, ex, harness::Val), cfg.model, ab, cfg.train);
    save_forecaster(cfg.out_dir / "checkpoint.bin", r.model, &data.thresholds);
    std::cout << "wrote " << (cfg.out_dir / "checkpoint.bin").string() << "\n";
    write(cfg.out_dir / "train_report.json", nlohmann::json(r.report).dump(2) + "\n");
    std::cout << "parameters " << r.report.parameter_count << ", epochs " << r.report.epochs.size()
              << ", best epoch " << r.report.best_epoch << ", best val MSE "
              << r.report.epochs.back().best_val_loss << "\n";
    return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint)
{
    const auto cfg = load(g);
    const fs::path ckpt = checkpoint.empty() ? cfg.out_dir / "checkpoint.bin" : fs::path(checkpoint);
    const LoadedForecaster loaded = load_forecaster(ckpt);
    const auto data = harness::prepare_data(cfg);
    const auto ex = harness::run_extraction(cfg, data);
    const ThresholdSet thr = loaded.thresholds.value_or(data.thresholds);
    const auto rows = harness::evaluate_model(loaded.model, harness::split_dataset(data, ex, harness::Test), thr);
    write(cfg.out_dir / "eval_metrics.csv", harness::metrics_csv(rows));
    print_metrics(rows);
    return 0;
}

int cmd_diagnose(const Globals& g)
{
    const auto cfg = load(g);
    if (cfg.dataset) throw InvalidArgument("diagnose needs the synthetic benchmark (no dataset in config)");
    const bench::Benchmark b = bench::build_benchmark(cfg.benchmark);
    const bench::DiagnosticReport rep = harness::run_diagnostic(cfg, b);
    write(cfg.out_dir / "rt_histogram.csv", harness::focus_histogram_csv(rep));
    std::string rows = "sample,n_redundant,focus_ratio,gain\n";
    for (const auto& r : rep.rows)
        rows += std::to_string(r.sample) + "," + std::to_string(r.n_redundant) + "," + harness::fmt(r.focus) + ","
                + harness::fmt(r.gain) + "\n";
    write(cfg.out_dir / "focus_ratios.csv", rows);
    std::printf("samples %zu, fraction R_t < 0: %.3f, mean R_t %.4f, median R_t %.4f\n", rep.rows.size(),
                rep.fraction_negative, rep.mean_focus, rep.median_focus);
    return 0;
}

int cmd_ablate(const Globals& g, const std::vector<std::string>& modes)
{
    auto cfg = load(g);
    if (!modes.empty()) cfg.ablations = modes;
    cfg.diagnostic = false;
    const auto data = harness::prepare_data(cfg);
    const auto ex = harness::run_extraction(cfg, data);
    const auto tr = harness::split_dataset(data, ex, harness::Train);
    const auto va = harness::split_dataset(data, ex, harness::Val);
    const auto te = harness::split_dataset(data, ex, harness::Test);
    std::vector<harness::MetricsRecord> rows;
    std::vector<std::string> all = {"full"};
    all.insert(all.end(), cfg.ablations.begin(), cfg.ablations.end());
    for (const std::string& m : all) {
        const TrainResult r = train(tr, va, cfg.model, Ablation::parse(m), cfg.train);
        const auto part = harness::evaluate_model(r.model, te, data.thresholds);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    write(cfg.out_dir / "ablation_metrics.csv", harness::metrics_csv(rows));
    print_metrics(rows);
    return 0;
}

int cmd_report(const Globals& g)
{
    const auto cfg = load(g);
    const harness::ReportBundle rep = harness::run_experiment(cfg);
    for (const auto& f : rep.files) std::cout << "wrote " << f.string() << "\n";
    if (!rep.ok) {
        std::cerr << "error: stage '" << rep.failed_stage << "' failed: " << rep.error << "\n";
        return 1;
    }
    print_metrics(rep.metrics);
    if (rep.diagnostic)
        std::printf("focus ratio: fraction R_t < 0 = %.3f, median R_t = %.4f\n", rep.diagnostic->fraction_negative,
                    rep.diagnostic->median_focus);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multimodal forecasting through temporal semantic primitives"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Seed for generation, initialization and shuffling");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--mock-llm", g.mock_llm, "Use the deterministic offline reader instead of an HTTP endpoint");
    app.add_option("--epochs", g.epochs, "Override training epochs");

    bool oracle = false;
    std::string ablation = "full";
    std::string checkpoint;
    std::vector<std::string> modes;

    auto* fit = app.add_subcommand("fit-thresholds", "Fit discretization thresholds on the training split");
    auto* ext = app.add_subcommand("extract", "Extract primitives from aligned text");
    ext->add_flag("--oracle", oracle, "Peaked labels from ground truth (synthetic data only)");
    auto* bch = app.add_subcommand("bench", "Build the semi-synthetic benchmark");
    auto* trn = app.add_subcommand("train", "Train the prefix forecaster");
    trn->add_option("--ablation", ablation, "full, no_tess, no_gating or drop_<primitive>");
    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the test split and subsets");
    evl->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
    auto* dia = app.add_subcommand("diagnose", "Train the fusion baseline and report focus ratios");
    auto* abl = app.add_subcommand("ablate", "Train and evaluate ablation variants");
    abl->add_option("--modes", modes, "Ablations besides full (default from config)");
    auto* rep = app.add_subcommand("report", "Run the full experiment and write every table");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*fit) return cmd_fit_thresholds(g);
        if (*ext) return cmd_extract(g, oracle);
        if (*bch) return cmd_bench(g);
        if (*trn) return cmd_train(g, ablation);
        if (*evl) return cmd_eval(g, checkpoint);
        if (*dia) return cmd_diagnose(g);
        if (*abl) return cmd_ablate(g, modes);
        if (*rep) return cmd_report(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
