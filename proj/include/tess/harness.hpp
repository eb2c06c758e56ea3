#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tess/benchmark.hpp"
#include "tess/forecaster.hpp"
#include "tess/llm.hpp"

namespace tess {

void to_json(nlohmann::json& j, const ThresholdConfig& c);
void from_json(const nlohmann::json& j, ThresholdConfig& c);

} // namespace tess

namespace tess::harness {

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::filesystem::path series_path;
    std::optional<std::filesystem::path> text_path;
    std::string target_channel;  // column name; empty selects the first channel
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    int L = 48;
    int H = 16;
    int step = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Epoch seconds from an integer or an ISO-8601 date / date-time
/// ("2024-01-31", "2024-01-31T09:30:00Z", "2024-01-31 09:30").
std::int64_t parse_timestamp(std::string_view text);

/// Header row, then one timestamp column followed by numeric channels.
TimeSeries load_series_csv(const std::filesystem::path& path, const std::string& target_channel = "");

struct TextRecord {
    std::int64_t timestamp = 0;
    std::string text;
};

struct TextLoadResult {
    std::vector<TextRecord> records;  // sorted by timestamp
    std::vector<std::string> errors;  // "line N: ..."
};

/// One {timestamp, text} object per line. Strict mode throws on the first bad line.
TextLoadResult load_text_jsonl(const std::filesystem::path& path, bool strict = false);

/// Per window, indices of the texts timestamped inside its observation span.
std::vector<std::vector<std::size_t>> assign_texts(std::span<const Window> windows,
                                                   const std::vector<std::int64_t>& timestamps,
                                                   std::span<const TextRecord> texts);

/// Per window, the assigned texts joined in chronological order; empty when
/// there are none.
std::vector<std::string> align_text(std::span<const Window> windows, const std::vector<std::int64_t>& timestamps,
                                    std::span<const TextRecord> texts);

/// Throws if any assignment points at a text outside its window's span.
void audit_no_lookahead(std::span<const Window> windows, const std::vector<std::int64_t>& timestamps,
                        std::span<const TextRecord> texts,
                        const std::vector<std::vector<std::size_t>>& assignments);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsRow {
    double mae = 0;
    double mse = 0;
    double rmse = 0;
    std::size_t count = 0;
};

MetricsRow metrics(const Matrix& y_hat, const Matrix& y);

enum class SubsetKind { MeanShift, VolatilityChange, ShapeTransition };
std::string_view subset_name(SubsetKind k);

struct NonstationarySubsets {
    std::vector<std::size_t> mean_shift;
    std::vector<std::size_t> volatility_change;
    std::vector<std::size_t> shape_transition;
    std::size_t total = 0;

    const std::vector<std::size_t>& operator[](SubsetKind k) const;
};

NonstationarySubsets nonstationary_subsets(std::span<const Window> windows, const ThresholdSet& thresholds);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct RunConfig {
    ModelConfig model;
    nn::TrainConfig train;
    ThresholdConfig thresholds;
    ExtractionConfig extraction;
    bench::BenchmarkConfig benchmark;
    std::optional<DatasetManifest> dataset;  // absent: synthetic benchmark
    std::optional<std::uint64_t> seed;       // overrides every component seed
    std::filesystem::path out_dir = "runs/default";
    bool mock_llm = false;
    /// Synthetic runs only: peaked labels from ground truth instead of an LLM.
    bool oracle_labels = true;
    double mock_error_rate = 0.15;
    std::vector<std::string> ablations = {"no_tess", "no_gating"};
    bool diagnostic = true;
    std::optional<std::filesystem::path> cache_path;  // default: <out>/cache.jsonl

    /// Throws InvalidArgument before any side effect.
    void validate() const;
    /// Copy with the global seed pushed into each component.
    RunConfig resolved() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

enum Split : std::size_t { Train = 0, Val = 1, Test = 2 };
inline constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};

struct PreparedData {
    ThresholdSet thresholds;
    std::array<std::vector<Window>, 3> windows;
    std::array<std::vector<std::string>, 3> texts;
    std::optional<bench::Benchmark> benchmark;
};

PreparedData prepare_data(const RunConfig& cfg);

struct ExtractionSummary {
    std::array<std::vector<Extraction>, 3> extractions;
    std::string source;  // "oracle", "lexicon-mock" or the endpoint id
    std::size_t backend_calls = 0;
    std::size_t missing = 0;
};

ExtractionSummary run_extraction(const RunConfig& cfg, const PreparedData& data);

ForecastDataset split_dataset(const PreparedData& data, const ExtractionSummary& ex, Split split);

struct MetricsRecord {
    std::string model;   // display name, e.g. "Full", "w/o TESS"
    std::string subset;  // "all" or a subset name
    MetricsRow row;
};

/// Rows for the full test set and each non-stationary subset.
std::vector<MetricsRecord> evaluate_model(const PrefixForecaster& model, const ForecastDataset& test,
                                          const ThresholdSet& thresholds);

std::string metrics_csv(std::span<const MetricsRecord> rows);
nlohmann::json metrics_json(std::span<const MetricsRecord> rows);

struct ReportBundle {
    bool ok = false;
    std::string failed_stage;
    std::string error;
    std::vector<MetricsRecord> metrics;
    std::vector<std::filesystem::path> files;
    std::optional<bench::DiagnosticReport> diagnostic;
};

/// fit-thresholds, extract, train (full plus ablations), evaluate, diagnose,
/// then write tables, curves and a manifest into cfg.out_dir. A failing
/// stage is recorded in the manifest and earlier outputs stay on disk.
ReportBundle run_experiment(const RunConfig& cfg);

/// Histogram of finite focus ratios as CSV (bin_lo, bin_hi, count).
std::string focus_histogram_csv(const bench::DiagnosticReport& rep, int bins = 20);

/// Baseline training plus the attention diagnostic on the synthetic benchmark.
bench::DiagnosticReport run_diagnostic(const RunConfig& cfg, const bench::Benchmark& b);

/// Fixed-precision number formatting used in every emitted table.
std::string fmt(double v);

} // namespace tess::harness
