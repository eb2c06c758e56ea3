#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tess/baseline.hpp"
#include "tess/llm.hpp"
#include "tess/primitives.hpp"
#include "tess/series.hpp"

namespace tess::bench {

/// The shape label set plus a flat template.
enum class Archetype { Flat, Ascend, Descend, Peak, Trough, Oscillate };

std::string_view archetype_name(Archetype a);
Archetype archetype_from_name(std::string_view name);

struct RegimeSegment {
    double mean = 0;
    double volatility = 1;
    Archetype archetype = Archetype::Flat;
    double amplitude = 1;
    /// 0 means "share the remaining length equally".
    int length = 0;
};

struct RegimeSpec {
    std::vector<RegimeSegment> segments;
    std::uint64_t noise_seed = 0;
    /// Multiplies every segment's volatility when drawing noise; 0 gives the bare templates.
    double noise_scale = 1;

    void validate(int length) const;
};

TimeSeries generate_nonstationary_series(const RegimeSpec& spec, int length);

struct RegimeSampler {
    int min_segment = 16;
    int max_segment = 56;
    double mean_jump = 2.5;
    double min_volatility = 0.15;
    double max_volatility = 1.2;
    double max_amplitude = 2.5;
};

/// Random segment sequence covering `length` steps.
RegimeSpec random_regime_spec(int length, std::mt19937_64& rng, const RegimeSampler& sampler = {});

// ---------------------------------------------------------------------------
// Annotated text
// ---------------------------------------------------------------------------

struct AnnotatedText {
    std::vector<std::string> tokens;
    std::vector<std::size_t> sig_idx;
    std::vector<std::size_t> red_idx;

    std::string text() const;
    void validate() const;
};

/// One sentence with the offsets of its statistic-bearing tokens. `cue` is the
/// contiguous token span a reader would key on.
struct TemplateSentence {
    std::vector<std::string> tokens;
    std::vector<std::size_t> content;
    std::size_t cue_begin = 0;
    std::size_t cue_end = 0;
};

struct TemplateBank {
    /// signal[kind][label index].
    std::array<std::vector<TemplateSentence>, kNumKinds> signal;
    std::vector<TemplateSentence> distractors;

    void validate() const;
};

const TemplateBank& default_template_bank();

/// Cue phrases from the bank, for the offline reader.
LexiconBackend::Lexicon lexicon_from_templates(const TemplateBank& bank);

/// Four signal sentences in kind order with `n_redundant` seeded distractor
/// sentences interleaved. Indices are recorded while rendering.
AnnotatedText describe_features(const PrimitiveVector& truth, const TemplateBank& bank, int n_redundant,
                                std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Samples and variants
// ---------------------------------------------------------------------------

struct BenchmarkSample {
    Window window;
    PrimitiveVector truth;
    AnnotatedText text;
    PrimitiveStats stats;
    int n_redundant = 0;
};

enum class Variant { Full, SignalOnly, Numerical };
std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct VariantBundle {
    Vector x_obs;
    std::vector<std::string> tokens;
    std::vector<double> exogenous;
};

VariantBundle make_variant(const BenchmarkSample& sample, Variant variant);
BaselineInput to_baseline_input(const VariantBundle& bundle, const Vector& y);

struct BenchmarkConfig {
    int L = 48;
    int H = 16;
    int step = 4;
    int series_length = 4000;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    int min_redundant = 2;
    int max_redundant = 14;
    std::uint64_t seed = 7;
    RegimeSampler regimes;
    ThresholdConfig thresholds;
};

void to_json(nlohmann::json& j, const BenchmarkConfig& c);
void from_json(const nlohmann::json& j, BenchmarkConfig& c);

struct Benchmark {
    ThresholdSet thresholds;
    std::vector<BenchmarkSample> train, val, test;
};

/// Generates one series, splits it chronologically, fits thresholds on the
/// training windows and labels every window with psi under them.
Benchmark build_benchmark(const BenchmarkConfig& cfg);

nlohmann::json sample_to_json(const BenchmarkSample& s);
BenchmarkSample sample_from_json(const nlohmann::json& j);
void save_split(const std::filesystem::path& path, std::span<const BenchmarkSample> samples);
std::vector<BenchmarkSample> load_split(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Attention diagnostics
// ---------------------------------------------------------------------------

/// Per-token attention: mean over query rows of an N x M matrix.
Vector token_attention(const Matrix& alpha);

struct FocusRatio {
    double value = 0;
    double mean_sig = 0;
    double mean_red = 0;
    /// Set when the redundant mean is 0 and the ratio is the +inf sentinel.
    std::string warning;

    bool signal_focused() const { return value > 0; }
};

/// R = log(mean alpha over sig / mean alpha over red).
FocusRatio focus_ratio(const Vector& alpha, std::span<const std::size_t> sig_idx,
                       std::span<const std::size_t> red_idx);

struct DiagnosticRow {
    std::size_t sample = 0;
    int n_redundant = 0;
    std::size_t n_sig = 0;
    std::size_t n_red = 0;
    double focus = 0;
    double mse_with_text = 0;
    double mse_without_text = 0;
    double gain = 0;  // without - with
};

struct RedundancyBucket {
    int n_redundant = 0;
    std::size_t count = 0;
    double mean_gain = 0;
    double mean_focus = 0;
};

struct DiagnosticReport {
    std::vector<DiagnosticRow> rows;
    double fraction_negative = 0;
    double mean_focus = 0;
    double median_focus = 0;
    std::vector<RedundancyBucket> by_redundancy;
};

DiagnosticReport run_attention_diagnostic(const BaselineFusionModel& baseline,
                                          std::span<const BenchmarkSample> samples);

} // namespace tess::bench
