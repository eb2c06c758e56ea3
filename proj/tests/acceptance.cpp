#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "oracle.hpp"
#include "parser_cases.hpp"
#include "toy_data.hpp"
#include "tess/harness.hpp"

using namespace tess;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

Vector random_walk(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    const double scale = u(rng);
    Vector v(n);
    double level = g(rng) * 5;
    for (int i = 0; i < n; ++i) {
        level += 0.3 * g(rng);
        v[i] = level + scale * g(rng) * (i >= n / 2 ? u(rng) : 1.0);
    }
    return v;
}

Outcome primitive_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    const int L = 48, H = 16;
    std::vector<Window> fit;
    for (int i = 0; i < 200; ++i) {
        const Vector s = random_walk(L + H, rng);
        fit.push_back({s.head(L), Vector(s.tail(H)), i, std::nullopt});
    }
    const ThresholdSet thr = fit_thresholds(fit);
    int agree = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vector s = random_walk(L + H, rng);
        const Vector x = s.head(L), y = s.tail(H);
        const PrimitiveVector got = extract_all(x, y, thr);
        const auto want = oracle::psi(oracle::to_seq(x), oracle::to_seq(y), thr);
        bool same = true;
        for (std::size_t k = 0; k < kNumKinds; ++k) same = same && got[kAllKinds[k]].index() == want[k];
        agree += same;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {agree == 1000 && secs < 5, std::to_string(agree) + "/1000 equal, " + num(secs, 3) + " s"};
}

Outcome gradient_fidelity()
{
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg = toy::tiny_config();
    cfg.lambda = 1.0;
    const ForecastDataset data = toy::dataset(cfg, 4, 5);
    const PrefixForecaster model(cfg);
    const Extraction mixed = oracle_extraction(toy::corrupt(data.truth[2], PrimitiveKind::Volatility, 1), 0.3);
    const auto errs = gradcheck::compare(model.parameters(), [&] {
        return model.sample_loss(data.windows[2].x_obs, *data.windows[2].y_fut, mixed, data.truth[2], nullptr).total;
    });
    const gradcheck::GroupError w =
        *std::max_element(errs.begin(), errs.end(), [](const auto& a, const auto& b) { return a.relative < b.relative; });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {w.relative < 1e-4 && secs < 60,
            std::to_string(errs.size()) + " groups, worst " + w.name + " rel " + num(w.relative, 3) + ", "
                + num(secs, 3) + " s"};
}

Outcome normalization_of_distributions()
{
    bench::BenchmarkConfig bc;
    const bench::Benchmark b = bench::build_benchmark(bc);
    LexiconBackend backend(bench::lexicon_from_templates(bench::default_template_bank()), 0.2);
    ExtractionConfig ec;

    ModelConfig cfg;
    cfg.L = bc.L;
    cfg.H = bc.H;
    const PrefixForecaster forecaster(cfg);
    const BaselineFusionModel baseline(cfg);
    ForwardOptions opts;
    opts.keep_attention = true;

    double dist_err = 0, attn_err = 0;
    std::size_t dists = 0, rows = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const bench::BenchmarkSample& s = b.train[i * b.train.size() / 100];
        const Extraction ex = extract(backend, nullptr, s.text.text(), ec);
        for (const auto& r : ex.results)
            if (r) {
                dist_err = std::max(dist_err, std::abs(r->distribution.probs.sum() - 1));
                ++dists;
            }
        for (double t : {0.3, 1.0, 2.5}) {
            LabelScores sc{kAllKinds[i % kNumKinds], Vector::Random(candidate_count(kAllKinds[i % kNumKinds])) * 20};
            dist_err = std::max(dist_err, std::abs(temper_softmax(sc, t).probs.sum() - 1));
            ++dists;
        }
        const ForwardResult fr = forecaster.forward(s.window.x_obs, ex, opts);
        for (const Matrix& a : fr.attention.weights) {
            attn_err = std::max(attn_err, (a.rowwise().sum().array() - 1).abs().maxCoeff());
            rows += static_cast<std::size_t>(a.rows());
        }
        const Matrix alpha = baseline.forward(s.window.x_obs, token_ids(s.text.tokens)).alpha;
        attn_err = std::max(attn_err, (alpha.rowwise().sum().array() - 1).abs().maxCoeff());
        rows += static_cast<std::size_t>(alpha.rows());
    }
    return {dists > 0 && rows > 0 && dist_err <= 1e-9 && attn_err <= 1e-6,
            std::to_string(dists) + " distributions max err " + num(dist_err, 3) + ", " + std::to_string(rows)
                + " attention rows max err " + num(attn_err, 3)};
}

Outcome normalization_round_trip()
{
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> loc(-1e4, 1e4), logscale(-6, 6);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vector x = (random_walk(48, rng).array() * std::exp(logscale(rng)) + loc(rng)).matrix();
        const Normalized n = instance_normalize(x);
        const Vector back = inverse_normalize(n.values, n.stats);
        const double scale = std::max(x.cwiseAbs().maxCoeff(), 1e-300);
        worst = std::max(worst, (back - x).cwiseAbs().maxCoeff() / scale);
    }
    return {worst <= 1e-6, "1000 windows, max relative error " + num(worst, 3)};
}

Outcome zero_gate_nulling()
{
    const ModelConfig cfg = toy::tiny_config();
    const ForecastDataset data = toy::dataset(cfg, 30, 8);
    const PrefixForecaster model(cfg);
    const std::array<double, 5> levels = {0, 0.25, 0.5, 0.75, 1.0};
    std::array<double, 5> deviation{};
    std::size_t corruptions = 0, identical = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (PrimitiveKind k : kAllKinds) {
            const Extraction bad = oracle_extraction(toy::corrupt(data.truth[i], k, i));
            for (std::size_t l = 0; l < levels.size(); ++l) {
                const Vector a = forecast(model, data.windows[i], data.extractions[i], levels[l]);
                const Vector b = forecast(model, data.windows[i], bad, levels[l]);
                if (l == 0) identical += a == b;
                deviation[l] += (a - b).cwiseAbs().mean();
            }
            ++corruptions;
        }
    bool monotone = true;
    for (std::size_t l = 1; l < levels.size(); ++l) monotone = monotone && deviation[l] >= 0.95 * deviation[l - 1];
    std::string curve;
    for (double d : deviation) curve += (curve.empty() ? "" : " ") + num(d / static_cast<double>(corruptions), 3);
    return {identical == corruptions && corruptions >= 100 && monotone && deviation[4] > 0,
            std::to_string(identical) + "/" + std::to_string(corruptions) + " identical at g=0, deviation " + curve};
}

double ranking_auc(const std::vector<double>& pos, const std::vector<double>& neg)
{
    double wins = 0;
    for (double p : pos)
        for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / static_cast<double>(pos.size() * neg.size());
}

Outcome gate_calibration()
{
    struct Item {
        PrimitiveLabel label;
        double margin;
        int correct;
    };
    std::mt19937_64 rng(606);
    auto make = [&](std::size_t n) {
        std::uniform_real_distribution<double> hi(1, 3), lo(0, 0.5);
        std::bernoulli_distribution coin(0.5);
        std::vector<Item> out;
        for (std::size_t i = 0; i < n; ++i) {
            const PrimitiveKind k = kAllKinds[i % kNumKinds];
            const PrimitiveLabel label(k, std::uniform_int_distribution<std::size_t>(0, candidate_count(k) - 1)(rng));
            const int correct = coin(rng);
            out.push_back({label, correct ? hi(rng) : lo(rng), correct});
        }
        return out;
    };
    const auto train_set = make(800), val_set = make(200), test_set = make(400);

    std::mt19937_64 init(7);
    const PrimitiveGating gating(16, init);
    auto bce = [&](const Item& it) {
        const std::vector<ad::Var> g = {gating.apply(it.label, it.margin).g};
        const std::vector<int> y = {it.correct};
        return gate_loss(g, y);
    };
    nn::TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 32;
    tc.learning_rate = 1e-2;
    tc.weight_decay = 0;
    nn::fit(
        gating.parameters(), train_set.size(),
        [&](std::size_t i, std::mt19937_64&) {
            nn::LossParts p;
            p.total = bce(train_set[i]);
            p.gate = p.total.scalar();
            return p;
        },
        [&] {
            double s = 0;
            for (const Item& it : val_set) s += bce(it).scalar();
            return s / static_cast<double>(val_set.size());
        },
        tc);

    std::vector<double> pos, neg;
    for (const Item& it : test_set)
        (it.correct ? pos : neg).push_back(gating.apply(it.label, it.margin).g.scalar());
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    const double auc = ranking_auc(pos, neg);
    return {auc >= 0.95, "AUC " + num(auc) + ", median gate correct " + num(pos[pos.size() / 2], 3) + " vs incorrect "
                             + num(neg[neg.size() / 2], 3)};
}

Outcome end_to_end_gain()
{
    harness::RunConfig cfg;
    cfg.train.epochs = 30;
    cfg.oracle_labels = true;
    cfg = cfg.resolved();
    const auto data = harness::prepare_data(cfg);
    const auto ex = harness::run_extraction(cfg, data);
    const auto tr = harness::split_dataset(data, ex, harness::Train);
    const auto va = harness::split_dataset(data, ex, harness::Val);
    const auto te = harness::split_dataset(data, ex, harness::Test);
    const double conditioned = evaluate_mse(train(tr, va, cfg.model, Ablation::no_gating(), cfg.train).model, te);
    const double plain = evaluate_mse(train(tr, va, cfg.model, Ablation::no_tess(), cfg.train).model, te);
    const double gain = 1 - conditioned / plain;
    return {tr.size() >= 500 && te.size() >= 100 && gain >= 0.15,
            std::to_string(tr.size()) + " train / " + std::to_string(te.size()) + " test, MSE " + num(conditioned)
                + " vs " + num(plain) + ", reduction " + num(100 * gain, 3) + "%"};
}

Outcome focus_ratio_fixtures()
{
    Vector even(5), sig(5), red(5);
    even << 0.2, 0.2, 0.2, 0.2, 0.2;
    sig << 0.2, 0.2, 0.05, 0.05, 0.05;
    red << 0.01, 0.01, 0.1, 0.1, 0.1;
    const std::vector<std::size_t> s = {0, 1}, r = {2, 3, 4};
    const double a = bench::focus_ratio(sig, s, r).value;
    const double b = bench::focus_ratio(red, s, r).value;
    const double u = bench::focus_ratio(even, s, r).value;
    // hand values: log((0.4/2)/(0.15/3)) and log((0.02/2)/(0.3/3))
    const double want_a = std::log((0.4 / 2) / (0.15 / 3));
    const double want_b = std::log((0.02 / 2) / (0.3 / 3));
    const bool exact = std::abs(a - want_a) <= 1e-15 && std::abs(b - want_b) <= 1e-15 && u == 0;
    const bool swapped = bench::focus_ratio(sig, r, s).value == -a && bench::focus_ratio(red, r, s).value == -b;
    return {exact && swapped, "R = " + num(a, 10) + ", " + num(b, 10) + ", uniform " + num(u) + ", swap negates "
                                  + (swapped ? "yes" : "no")};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism()
{
    const fs::path root = fs::temp_directory_path() / "tess_acceptance_determinism";
    fs::remove_all(root);
    harness::RunConfig cfg;
    cfg.model.L = cfg.benchmark.L = 24;
    cfg.model.H = cfg.benchmark.H = 8;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.ff_width = 32;
    cfg.benchmark.series_length = 1000;
    cfg.train.epochs = 3;
    cfg.seed = 11;
    cfg.mock_llm = true;
    cfg.oracle_labels = false;
    cfg.diagnostic = false;
    cfg.cache_path = root / "cache.jsonl";

    harness::RunConfig warm = cfg;
    warm.out_dir = root / "warm";
    const harness::ReportBundle w = harness::run_experiment(warm);
    harness::RunConfig a = cfg, b = cfg;
    a.out_dir = root / "a";
    b.out_dir = root / "b";
    const harness::ReportBundle ra = harness::run_experiment(a);
    const harness::ReportBundle rb = harness::run_experiment(b);
    if (!w.ok || !ra.ok || !rb.ok) return {false, "run failed: " + w.error + ra.error + rb.error};
    bool same = true;
    for (const char* f : {"metrics.csv", "metrics.json"}) {
        const std::string x = slurp(a.out_dir / f), y = slurp(b.out_dir / f);
        same = same && !x.empty() && x == y && x == slurp(warm.out_dir / f);
    }
    fs::remove_all(root);
    return {same, std::string("metrics.csv and metrics.json ") + (same ? "byte-identical" : "differ")
                      + " across cold and warm runs"};
}

Outcome parser_strictness()
{
    std::size_t ok = 0;
    std::string first_failure;
    const auto cases = parser_cases();
    for (const ParserCase& c : cases) {
        bool good = false;
        try {
            const PrimitiveVector v = parse_structured_response(c.response);
            good = c.accept;
            for (std::size_t k = 0; k < kNumKinds && good; ++k) good = v[kAllKinds[k]].name() == c.labels[k];
        } catch (const ParseError& e) {
            good = !c.accept && std::string(e.what()).find(c.error_fragment) != std::string::npos;
        }
        ok += good;
        if (!good && first_failure.empty()) first_failure = c.name;
    }
    return {ok == cases.size() && cases.size() == 20,
            std::to_string(ok) + "/" + std::to_string(cases.size()) + " cases"
                + (first_failure.empty() ? "" : ", first failure: " + first_failure)};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"Primitive oracle equivalence", primitive_oracle},
        {"Gradient fidelity", gradient_fidelity},
        {"Distribution and attention normalization", normalization_of_distributions},
        {"Normalization round trip", normalization_round_trip},
        {"Zero-gate nulling", zero_gate_nulling},
        {"Gate calibration", gate_calibration},
        {"End-to-end gain over the time-only ablation", end_to_end_gain},
        {"Focus ratio correctness", focus_ratio_fixtures},
        {"Determinism", determinism},
        {"Parser strictness", parser_strictness},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %zu. %s (%s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
