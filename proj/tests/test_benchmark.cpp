#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "tess/benchmark.hpp"

using namespace tess;
using namespace tess::bench;
using doctest::Approx;

namespace {

BenchmarkConfig small_config()
{
    BenchmarkConfig c;
    c.L = 24;
    c.H = 8;
    c.step = 4;
    c.series_length = 1200;
    c.seed = 21;
    return c;
}

const Benchmark& small_benchmark()
{
    static const Benchmark b = build_benchmark(small_config());
    return b;
}

std::vector<std::size_t> range(std::size_t a, std::size_t b)
{
    std::vector<std::size_t> v;
    for (std::size_t i = a; i < b; ++i) v.push_back(i);
    return v;
}

} // namespace

TEST_CASE("flat noiseless segment is constant")
{
    RegimeSpec spec;
    spec.segments = {{3.5, 0.4, Archetype::Flat}};
    spec.noise_scale = 0;
    const TimeSeries s = generate_nonstationary_series(spec, 40);
    CHECK(s.length() == 40);
    CHECK((s.target().array() == 3.5).all());
}

TEST_CASE("two noiseless levels make a step")
{
    RegimeSpec spec;
    spec.segments = {{0, 1, Archetype::Flat}, {10, 1, Archetype::Flat}};
    spec.noise_scale = 0;
    const Vector v = generate_nonstationary_series(spec, 40).target();
    CHECK((v.head(20).array() == 0).all());
    CHECK((v.tail(20).array() == 10).all());
    Vector x = v.segment(12, 12), y = v.segment(24, 8);
    x[0] += 1e-3;
    CHECK(mean_shift_stat(x, y) > 0);
}

TEST_CASE("generation is seeded")
{
    std::mt19937_64 r1(5), r2(5);
    const RegimeSpec a = random_regime_spec(500, r1), b = random_regime_spec(500, r2);
    CHECK(generate_nonstationary_series(a, 500).values() == generate_nonstationary_series(b, 500).values());
    RegimeSpec c = a;
    c.noise_seed += 1;
    CHECK(generate_nonstationary_series(c, 500).values() != generate_nonstationary_series(a, 500).values());
}

TEST_CASE("invalid regime specs")
{
    RegimeSpec spec;
    CHECK_THROWS_AS(generate_nonstationary_series(spec, 40), InvalidArgument);
    spec.segments = {{0, 1, Archetype::Peak}, {0, 1, Archetype::Trough}};
    CHECK_THROWS_AS(generate_nonstationary_series(spec, 15), InvalidArgument);
    spec.segments[1].volatility = 0;
    CHECK_THROWS_AS(generate_nonstationary_series(spec, 40), InvalidArgument);
    CHECK_THROWS_AS(archetype_from_name("spiral"), InvalidArgument);
    CHECK(archetype_from_name("oscillate") == Archetype::Oscillate);
}

TEST_CASE("template bank shape")
{
    const TemplateBank& bank = default_template_bank();
    CHECK_NOTHROW(bank.validate());
    for (PrimitiveKind k : kAllKinds) CHECK(bank.signal[index_of(k)].size() == candidate_count(k));
    CHECK(bank.distractors.size() >= 10);
    const auto lex = lexicon_from_templates(bank);
    CHECK(lex[index_of(PrimitiveKind::Lag)].size() == 6);
}

TEST_CASE("describe_features records signal and redundant indices")
{
    const TemplateBank& bank = default_template_bank();
    PrimitiveVector truth;
    truth.mean = {PrimitiveKind::MeanShift, 0};
    truth.shape = {PrimitiveKind::Shape, 2};

    std::mt19937_64 rng(1);
    const AnnotatedText bare = describe_features(truth, bank, 0, rng);
    CHECK_NOTHROW(bare.validate());
    std::size_t signal_tokens = 0, content = 0;
    for (PrimitiveKind k : kAllKinds) {
        const TemplateSentence& s = bank.signal[index_of(k)][truth[k].index()];
        signal_tokens += s.tokens.size();
        content += s.content.size();
    }
    CHECK(bare.tokens.size() == signal_tokens);
    CHECK(bare.sig_idx.size() == content);
    CHECK(bare.red_idx.size() == signal_tokens - content);

    std::multiset<std::string> expected, got;
    for (PrimitiveKind k : kAllKinds) {
        const TemplateSentence& s = bank.signal[index_of(k)][truth[k].index()];
        for (std::size_t i : s.content) expected.insert(s.tokens[i]);
    }
    for (std::size_t i : bare.sig_idx) got.insert(bare.tokens[i]);
    CHECK(got == expected);

    std::mt19937_64 r1(2), r2(2);
    const AnnotatedText a = describe_features(truth, bank, 8, r1);
    const AnnotatedText b = describe_features(truth, bank, 8, r2);
    CHECK(a.tokens == b.tokens);
    CHECK(a.sig_idx == b.sig_idx);
    CHECK(a.sig_idx.size() == content);
    CHECK(3 * a.sig_idx.size() < a.red_idx.size());
}

TEST_CASE("signal tokens are sparse once redundancy is moderate")
{
    std::mt19937_64 rng(3);
    for (int n = 5; n <= 14; ++n) {
        const AnnotatedText t = describe_features(PrimitiveVector{}, default_template_bank(), n, rng);
        CHECK(2 * t.sig_idx.size() < t.red_idx.size());
    }
}

TEST_CASE("annotated text validation")
{
    AnnotatedText t;
    t.tokens = {"a", "b", "c"};
    t.sig_idx = {0};
    t.red_idx = {1, 2};
    CHECK_NOTHROW(t.validate());
    t.red_idx = {0, 1, 2};
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t.red_idx = {1};
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t.sig_idx = {};
    t.red_idx = {0, 1, 2};
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("benchmark samples carry their true labels")
{
    const Benchmark& b = small_benchmark();
    CHECK(b.train.size() > 100);
    CHECK_FALSE(b.val.empty());
    CHECK_FALSE(b.test.empty());
    for (const auto* split : {&b.train, &b.val, &b.test})
        for (const BenchmarkSample& s : *split) {
            CHECK(s.truth == extract_all(s.window.x_obs, *s.window.y_fut, b.thresholds));
            CHECK_NOTHROW(s.text.validate());
            CHECK(s.n_redundant >= 2);
            CHECK(s.n_redundant <= 14);
        }
}

TEST_CASE("benchmark construction is seeded")
{
    const Benchmark again = build_benchmark(small_config());
    const Benchmark& b = small_benchmark();
    REQUIRE(again.test.size() == b.test.size());
    CHECK(again.thresholds.tau2_mean == b.thresholds.tau2_mean);
    for (std::size_t i = 0; i < b.test.size(); ++i) {
        CHECK(again.test[i].text.tokens == b.test[i].text.tokens);
        CHECK(again.test[i].window.x_obs == b.test[i].window.x_obs);
    }
}

TEST_CASE("variants")
{
    const BenchmarkSample& s = small_benchmark().test.front();
    const VariantBundle full = make_variant(s, Variant::Full);
    const VariantBundle sig = make_variant(s, Variant::SignalOnly);
    const VariantBundle num = make_variant(s, Variant::Numerical);
    CHECK(full.tokens.size() == s.text.sig_idx.size() + s.text.red_idx.size());
    CHECK(sig.tokens.size() == s.text.sig_idx.size());
    for (const std::string& t : sig.tokens) CHECK(std::find(full.tokens.begin(), full.tokens.end(), t) != full.tokens.end());
    CHECK(num.tokens.empty());
    REQUIRE(num.exogenous.size() == 5);
    CHECK(num.exogenous[0] == s.stats.delta_mu);
    CHECK(num.exogenous[1] == s.stats.r_sigma);
    CHECK(num.exogenous[4] == s.stats.lag.peak);
    CHECK(full.x_obs == s.window.x_obs);
    CHECK(variant_from_name(variant_name(Variant::SignalOnly)) == Variant::SignalOnly);
}

TEST_CASE("split serialization round trip")
{
    const auto path = std::filesystem::temp_directory_path() / "tess_test_split.jsonl";
    const auto& test = small_benchmark().test;
    save_split(path, test);
    const auto back = load_split(path);
    REQUIRE(back.size() == test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        CHECK(back[i].window.x_obs == test[i].window.x_obs);
        CHECK(*back[i].window.y_fut == *test[i].window.y_fut);
        CHECK(back[i].truth == test[i].truth);
        CHECK(back[i].text.sig_idx == test[i].text.sig_idx);
        CHECK(back[i].stats.delta_mu == test[i].stats.delta_mu);
        CHECK(back[i].stats.lag.pi == test[i].stats.lag.pi);
    }
    std::filesystem::remove(path);
}

TEST_CASE("focus ratio hand values")
{
    Vector even(5), sig(5), red(5);
    even << 0.2, 0.2, 0.2, 0.2, 0.2;
    sig << 0.2, 0.2, 0.05, 0.05, 0.05;
    red << 0.01, 0.01, 0.1, 0.1, 0.1;
    const auto s = range(0, 2), r = range(2, 5);
    CHECK(focus_ratio(even, s, r).value == 0);
    CHECK(focus_ratio(sig, s, r).value == Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(focus_ratio(sig, s, r).signal_focused());
    CHECK(focus_ratio(red, s, r).value == Approx(-2.302585092994046).epsilon(1e-14));
    CHECK_FALSE(focus_ratio(red, s, r).signal_focused());
    CHECK(focus_ratio(red, r, s).value == -focus_ratio(red, s, r).value);
}

TEST_CASE("focus ratio edge cases")
{
    Vector a(3);
    a << 0.5, 0.5, 0.0;
    const std::vector<std::size_t> s = {0, 1}, r = {2}, none;
    const FocusRatio inf = focus_ratio(a, s, r);
    CHECK(std::isinf(inf.value));
    CHECK_FALSE(inf.warning.empty());
    CHECK_THROWS_AS(focus_ratio(a, none, r), InvalidArgument);
    CHECK_THROWS_AS(focus_ratio(a, s, none), InvalidArgument);
    const std::vector<std::size_t> bad = {7};
    CHECK_THROWS_AS(focus_ratio(a, s, bad), InvalidArgument);
    a[2] = -0.1;
    CHECK_THROWS_AS(focus_ratio(a, s, r), InvalidArgument);
}

TEST_CASE("token attention averages over query rows")
{
    Matrix alpha(2, 3);
    alpha << 0.2, 0.3, 0.5, 0.4, 0.1, 0.5;
    const Vector t = token_attention(alpha);
    CHECK(t[0] == Approx(0.3));
    CHECK(t[1] == Approx(0.2));
    CHECK(t[2] == Approx(0.5));
}

TEST_CASE("uniform attention gives zero focus on every sample")
{
    ModelConfig cfg;
    cfg.L = 24;
    cfg.H = 8;
    cfg.P = 8;
    cfg.S = 8;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ff_width = 16;
    const BaselineFusionModel m(cfg);
    for (auto& [name, v] : m.parameters())
        if (name == "cross.w_q") v.mutable_value().setZero();
    std::vector<BenchmarkSample> samples(small_benchmark().test.begin(), small_benchmark().test.begin() + 12);
    const DiagnosticReport rep = run_attention_diagnostic(m, samples);
    REQUIRE(rep.rows.size() == samples.size());
    for (const DiagnosticRow& r : rep.rows) CHECK(std::abs(r.focus) < 1e-12);
    CHECK(rep.fraction_negative <= 1.0);
    std::size_t bucketed = 0;
    for (const RedundancyBucket& b : rep.by_redundancy) bucketed += b.count;
    CHECK(bucketed == samples.size());
}
