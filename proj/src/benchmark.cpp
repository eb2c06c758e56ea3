#include "tess/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "tess/checkpoint.hpp"

namespace tess::bench {

namespace {

constexpr std::array<std::string_view, 6> kArchetypeNames = {"flat", "ascend", "descend",
                                                             "peak", "trough", "oscillate"};

double archetype_value(Archetype a, double u)
{
    switch (a) {
    case Archetype::Flat: return 0;
    case Archetype::Ascend: return 2 * u - 1;
    case Archetype::Descend: return 1 - 2 * u;
    case Archetype::Peak: return 1 - std::abs(2 * u - 1);
    case Archetype::Trough: return std::abs(2 * u - 1) - 1;
    case Archetype::Oscillate: return std::sin(2 * std::numbers::pi * 3 * u);
    }
    return 0;
}

// "[...]" marks the cue span; "~word" marks a function word inside it.
TemplateSentence parse_template(std::string_view pattern)
{
    TemplateSentence t;
    std::istringstream in{std::string(pattern)};
    std::string word;
    bool in_cue = false;
    while (in >> word) {
        if (word.front() == '[') {
            in_cue = true;
            t.cue_begin = t.tokens.size();
            word.erase(0, 1);
        }
        bool closes = false;
        if (word.back() == ']') {
            closes = true;
            word.pop_back();
        }
        bool function_word = false;
        if (word.front() == '~') {
            function_word = true;
            word.erase(0, 1);
        }
        if (in_cue && !function_word) t.content.push_back(t.tokens.size());
        t.tokens.push_back(word);
        if (closes) {
            in_cue = false;
            t.cue_end = t.tokens.size();
        }
    }
    return t;
}

TemplateBank make_default_bank()
{
    TemplateBank b;
    auto add = [&](PrimitiveKind k, std::string_view lead, std::initializer_list<std::string_view> cues,
                   std::string_view tail) {
        for (std::string_view cue : cues)
            b.signal[index_of(k)].push_back(
                parse_template(std::string(lead) + " [" + std::string(cue) + "] " + std::string(tail)));
    };
    add(PrimitiveKind::MeanShift, "analysts expect prices to",
        {"surge sharply", "edge higher", "hold steady", "slip lower", "plunge steeply"},
        "over the coming sessions");
    add(PrimitiveKind::Volatility, "trading looks set to become",
        {"wildly erratic", "somewhat choppier", "equally active", "somewhat quieter", "remarkably tranquil"},
        "in the days ahead");
    add(PrimitiveKind::Shape, "the price path should",
        {"climb persistently", "sink persistently", "crest ~and ~then retreat", "dip ~and ~then rebound",
         "whipsaw repeatedly"},
        "through the horizon");
    add(PrimitiveKind::Lag, "the news effect should",
        {"strike immediately ~but dissipate", "strike immediately ~and endure", "build gradually ~but dissipate",
         "build gradually ~and endure", "emerge belatedly", "spread uniformly"},
        "according to desk strategists");

    for (std::string_view s : {
             "the company will host its annual shareholder meeting next month",
             "a regional office recently relocated to a larger building",
             "management thanked employees for their contributions this year",
             "the firm published its updated sustainability report on tuesday",
             "several directors attended an industry conference in the capital",
             "the quarterly newsletter featured an interview with the founder",
             "a new logo was unveiled during the product showcase",
             "the board approved a routine change to its meeting calendar",
             "local media covered the opening of a community center",
             "the chief executive spoke at a university graduation ceremony",
             "an internal memo reminded staff about the holiday schedule",
             "the investor relations page was redesigned for mobile readers",
             "a charity partnership was renewed for another season",
             "the cafeteria menu at headquarters was updated",
             "employees volunteered at a park cleanup over the weekend",
             "the legal team filed paperwork related to a trademark",
             "a podcast episode discussed the history of the brand",
             "the firm sponsored a youth sports tournament",
             "a delegation visited a supplier facility overseas",
             "the annual report cover was printed on recycled paper",
             "officials toured the new warehouse near the harbor",
             "the website added a frequently asked questions section",
             "a former executive published a memoir about leadership",
             "the company changed its auditing firm after a routine review"})
        b.distractors.push_back(parse_template(s));
    return b;
}

nlohmann::json stats_to_json(const PrimitiveStats& s)
{
    return {{"delta_mu", s.delta_mu},
            {"r_sigma", s.r_sigma},
            {"signs", s.signs},
            {"lag",
             {{"pi", std::vector<double>(s.lag.pi.data(), s.lag.pi.data() + s.lag.pi.size())},
              {"c", s.lag.centroid},
              {"d", s.lag.tail},
              {"q", s.lag.peak},
              {"argmax", s.lag.argmax}}}};
}

PrimitiveStats stats_from_json(const nlohmann::json& j)
{
    PrimitiveStats s;
    s.delta_mu = j.at("delta_mu").get<double>();
    s.r_sigma = j.at("r_sigma").get<double>();
    s.signs = j.at("signs").get<std::vector<int>>();
    const auto& lag = j.at("lag");
    const auto pi = lag.at("pi").get<std::vector<double>>();
    s.lag.pi = Eigen::Map<const Vector>(pi.data(), static_cast<Eigen::Index>(pi.size()));
    s.lag.centroid = lag.at("c").get<double>();
    s.lag.tail = lag.at("d").get<double>();
    s.lag.peak = lag.at("q").get<double>();
    s.lag.argmax = lag.at("argmax").get<Eigen::Index>();
    return s;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v)
{
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<BenchmarkSample> label_split(const BenchmarkConfig& cfg, const ThresholdSet& thr,
                                         std::vector<Window> windows, std::uint64_t text_seed)
{
    std::mt19937_64 rng(text_seed);
    std::uniform_int_distribution<int> n_red(cfg.min_redundant, cfg.max_redundant);
    std::vector<BenchmarkSample> out;
    out.reserve(windows.size());
    for (Window& w : windows) {
        BenchmarkSample s;
        s.stats = compute_stats(w.x_obs, *w.y_fut, thr);
        s.truth = classify_stats(s.stats, thr);
        s.n_redundant = n_red(rng);
        s.text = describe_features(s.truth, default_template_bank(), s.n_redundant, rng);
        s.window = std::move(w);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

std::string_view archetype_name(Archetype a) { return kArchetypeNames[static_cast<std::size_t>(a)]; }

Archetype archetype_from_name(std::string_view name)
{
    for (std::size_t i = 0; i < kArchetypeNames.size(); ++i)
        if (kArchetypeNames[i] == name) return static_cast<Archetype>(i);
    throw InvalidArgument("unknown archetype '" + std::string(name) + "'");
}

void RegimeSpec::validate(int length) const
{
    if (segments.empty()) throw InvalidArgument("regime spec: segment count must be >= 1");
    if (length < static_cast<int>(segments.size()) * 8)
        throw InvalidArgument("regime spec: length " + std::to_string(length) + " is shorter than 8 x "
                              + std::to_string(segments.size()) + " segments");
    if (!(noise_scale >= 0)) throw InvalidArgument("regime spec: noise_scale must be >= 0");
    int fixed = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const RegimeSegment& s = segments[i];
        if (!(s.volatility > 0))
            throw InvalidArgument("regime spec: segment " + std::to_string(i) + " volatility must be > 0");
        if (!std::isfinite(s.mean) || !std::isfinite(s.amplitude))
            throw InvalidArgument("regime spec: segment " + std::to_string(i) + " has non-finite values");
        if (s.length < 0) throw InvalidArgument("regime spec: negative segment length");
        fixed += s.length;
    }
    if (fixed > length) throw InvalidArgument("regime spec: segment lengths exceed series length");
}

TimeSeries generate_nonstationary_series(const RegimeSpec& spec, int length)
{
    spec.validate(length);
    int fixed = 0;
    int flexible = 0;
    for (const RegimeSegment& s : spec.segments) {
        fixed += s.length;
        flexible += s.length == 0 ? 1 : 0;
    }
    const int share = flexible > 0 ? (length - fixed) / flexible : 0;
    std::vector<int> lengths;
    int assigned = 0;
    for (const RegimeSegment& s : spec.segments) {
        lengths.push_back(s.length == 0 ? share : s.length);
        assigned += lengths.back();
    }
    lengths.back() += length - assigned;

    std::mt19937_64 rng(spec.noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Vector values(length);
    int t = 0;
    for (std::size_t i = 0; i < spec.segments.size(); ++i) {
        const RegimeSegment& s = spec.segments[i];
        const int n = lengths[i];
        for (int k = 0; k < n; ++k, ++t) {
            const double u = n > 1 ? static_cast<double>(k) / (n - 1) : 0.0;
            const double eps = noise(rng);
            values[t] = s.mean + s.amplitude * archetype_value(s.archetype, u)
                        + spec.noise_scale * s.volatility * eps;
        }
    }
    return TimeSeries::from_values(values, 1'600'000'000, 86'400);
}

RegimeSpec random_regime_spec(int length, std::mt19937_64& rng, const RegimeSampler& sampler)
{
    detail::require(sampler.min_segment >= 8 && sampler.max_segment >= sampler.min_segment,
                    "regime sampler: need 8 <= min_segment <= max_segment");
    std::uniform_int_distribution<int> seg_len(sampler.min_segment, sampler.max_segment);
    std::normal_distribution<double> jump(0.0, sampler.mean_jump);
    std::uniform_real_distribution<double> vol(sampler.min_volatility, sampler.max_volatility);
    std::uniform_real_distribution<double> amp(0.0, sampler.max_amplitude);
    std::uniform_int_distribution<int> arch(0, static_cast<int>(kArchetypeNames.size()) - 1);

    RegimeSpec spec;
    spec.noise_seed = rng();
    double level = 0;
    int used = 0;
    while (used < length) {
        RegimeSegment s;
        s.length = seg_len(rng);
        if (length - used - s.length < sampler.min_segment) s.length = length - used;
        level = 0.6 * level + jump(rng);
        s.mean = level;
        s.volatility = vol(rng);
        s.amplitude = amp(rng);
        s.archetype = static_cast<Archetype>(arch(rng));
        used += s.length;
        spec.segments.push_back(s);
    }
    return spec;
}

// ---------------------------------------------------------------------------

std::string AnnotatedText::text() const
{
    std::string out;
    for (const std::string& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

void AnnotatedText::validate() const
{
    if (sig_idx.empty()) throw InvalidArgument("annotated text: empty signal set");
    std::vector<int> seen(tokens.size(), 0);
    for (std::size_t i : sig_idx) {
        detail::require(i < tokens.size(), "annotated text: signal index out of range");
        seen[i] += 1;
    }
    for (std::size_t i : red_idx) {
        detail::require(i < tokens.size(), "annotated text: redundant index out of range");
        seen[i] += 2;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (seen[i] != 1 && seen[i] != 2)
            throw InvalidArgument("annotated text: token " + std::to_string(i)
                                  + (seen[i] == 0 ? " is in neither set" : " is in both sets"));
}

void TemplateBank::validate() const
{
    for (PrimitiveKind k : kAllKinds) {
        const auto& v = signal[index_of(k)];
        if (v.size() != candidate_count(k))
            throw InvalidArgument("template bank: kind '" + std::string(kind_slug(k)) + "' needs "
                                  + std::to_string(candidate_count(k)) + " templates, has "
                                  + std::to_string(v.size()));
        for (const TemplateSentence& t : v)
            if (t.content.empty() || t.cue_end <= t.cue_begin)
                throw InvalidArgument("template bank: signal template without content tokens");
    }
}

const TemplateBank& default_template_bank()
{
    static const TemplateBank bank = make_default_bank();
    return bank;
}

LexiconBackend::Lexicon lexicon_from_templates(const TemplateBank& bank)
{
    bank.validate();
    LexiconBackend::Lexicon lex;
    for (PrimitiveKind k : kAllKinds)
        for (const TemplateSentence& t : bank.signal[index_of(k)])
            lex[index_of(k)].emplace_back(t.tokens.begin() + static_cast<std::ptrdiff_t>(t.cue_begin),
                                          t.tokens.begin() + static_cast<std::ptrdiff_t>(t.cue_end));
    return lex;
}

AnnotatedText describe_features(const PrimitiveVector& truth, const TemplateBank& bank, int n_redundant,
                                std::mt19937_64& rng)
{
    detail::require(n_redundant >= 0, "describe_features: n_redundant must be >= 0");
    bank.validate();
    if (n_redundant > 0 && bank.distractors.empty())
        throw InvalidArgument("describe_features: empty distractor bank");

    // Slot order: signal sentences keep kind order, distractors fill seeded gaps.
    const std::size_t total = kNumKinds + static_cast<std::size_t>(n_redundant);
    std::vector<int> is_signal(total, 0);
    std::vector<std::size_t> slots(total);
    for (std::size_t i = 0; i < total; ++i) slots[i] = i;
    for (std::size_t i = total; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(slots[i - 1], slots[pick(rng)]);
    }
    std::vector<std::size_t> signal_slots(slots.begin(), slots.begin() + kNumKinds);
    std::sort(signal_slots.begin(), signal_slots.end());
    for (std::size_t s : signal_slots) is_signal[s] = 1;

    std::uniform_int_distribution<std::size_t> pick_distractor(0, bank.distractors.empty() ? 0
                                                                   : bank.distractors.size() - 1);
    AnnotatedText out;
    std::size_t next_kind = 0;
    for (std::size_t slot = 0; slot < total; ++slot) {
        const std::size_t base = out.tokens.size();
        if (is_signal[slot]) {
            const PrimitiveKind k = kAllKinds[next_kind++];
            const TemplateSentence& t = bank.signal[index_of(k)][truth[k].index()];
            out.tokens.insert(out.tokens.end(), t.tokens.begin(), t.tokens.end());
            std::vector<int> content(t.tokens.size(), 0);
            for (std::size_t c : t.content) content[c] = 1;
            for (std::size_t i = 0; i < t.tokens.size(); ++i)
                (content[i] ? out.sig_idx : out.red_idx).push_back(base + i);
        } else {
            const TemplateSentence& t = bank.distractors[pick_distractor(rng)];
            out.tokens.insert(out.tokens.end(), t.tokens.begin(), t.tokens.end());
            for (std::size_t i = 0; i < t.tokens.size(); ++i) out.red_idx.push_back(base + i);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view variant_name(Variant v)
{
    switch (v) {
    case Variant::Full: return "full";
    case Variant::SignalOnly: return "signal_only";
    case Variant::Numerical: return "numerical";
    }
    return "full";
}

Variant variant_from_name(std::string_view name)
{
    if (name == "full") return Variant::Full;
    if (name == "signal_only") return Variant::SignalOnly;
    if (name == "numerical") return Variant::Numerical;
    throw InvalidArgument("unknown variant '" + std::string(name) + "'");
}

VariantBundle make_variant(const BenchmarkSample& sample, Variant variant)
{
    VariantBundle b;
    b.x_obs = sample.window.x_obs;
    switch (variant) {
    case Variant::Full: b.tokens = sample.text.tokens; break;
    case Variant::SignalOnly:
        for (std::size_t i : sample.text.sig_idx) b.tokens.push_back(sample.text.tokens[i]);
        break;
    case Variant::Numerical:
        b.exogenous = {sample.stats.delta_mu, sample.stats.r_sigma, sample.stats.lag.centroid,
                       sample.stats.lag.tail, sample.stats.lag.peak};
        break;
    }
    return b;
}

BaselineInput to_baseline_input(const VariantBundle& bundle, const Vector& y)
{
    return {bundle.x_obs, token_ids(bundle.tokens), bundle.exogenous, y};
}

void to_json(nlohmann::json& j, const BenchmarkConfig& c)
{
    j = {{"L", c.L},
         {"H", c.H},
         {"step", c.step},
         {"series_length", c.series_length},
         {"train_fraction", c.train_fraction},
         {"val_fraction", c.val_fraction},
         {"min_redundant", c.min_redundant},
         {"max_redundant", c.max_redundant},
         {"seed", c.seed},
         {"regimes",
          {{"min_segment", c.regimes.min_segment},
           {"max_segment", c.regimes.max_segment},
           {"mean_jump", c.regimes.mean_jump},
           {"min_volatility", c.regimes.min_volatility},
           {"max_volatility", c.regimes.max_volatility},
           {"max_amplitude", c.regimes.max_amplitude}}}};
}

void from_json(const nlohmann::json& j, BenchmarkConfig& c)
{
    c.L = j.value("L", c.L);
    c.H = j.value("H", c.H);
    c.step = j.value("step", c.step);
    c.series_length = j.value("series_length", c.series_length);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.min_redundant = j.value("min_redundant", c.min_redundant);
    c.max_redundant = j.value("max_redundant", c.max_redundant);
    c.seed = j.value("seed", c.seed);
    if (j.contains("regimes")) {
        const auto& r = j.at("regimes");
        c.regimes.min_segment = r.value("min_segment", c.regimes.min_segment);
        c.regimes.max_segment = r.value("max_segment", c.regimes.max_segment);
        c.regimes.mean_jump = r.value("mean_jump", c.regimes.mean_jump);
        c.regimes.min_volatility = r.value("min_volatility", c.regimes.min_volatility);
        c.regimes.max_volatility = r.value("max_volatility", c.regimes.max_volatility);
        c.regimes.max_amplitude = r.value("max_amplitude", c.regimes.max_amplitude);
    }
}

Benchmark build_benchmark(const BenchmarkConfig& cfg)
{
    detail::require(cfg.min_redundant >= 0 && cfg.max_redundant >= cfg.min_redundant,
                    "benchmark: invalid redundancy range");
    std::mt19937_64 rng(cfg.seed);
    RegimeSpec spec = random_regime_spec(cfg.series_length, rng, cfg.regimes);
    const TimeSeries series = generate_nonstationary_series(spec, cfg.series_length);
    const auto parts = chronological_split(series, cfg.train_fraction, cfg.val_fraction);

    std::vector<Window> train_w = slide_windows(parts[0], cfg.L, cfg.H, cfg.step);
    std::vector<Window> val_w = slide_windows(parts[1], cfg.L, cfg.H, cfg.step);
    std::vector<Window> test_w = slide_windows(parts[2], cfg.L, cfg.H, cfg.step);

    Benchmark b;
    b.thresholds = fit_thresholds(train_w, cfg.thresholds);
    b.train = label_split(cfg, b.thresholds, std::move(train_w), cfg.seed * 3 + 1);
    b.val = label_split(cfg, b.thresholds, std::move(val_w), cfg.seed * 3 + 2);
    b.test = label_split(cfg, b.thresholds, std::move(test_w), cfg.seed * 3 + 3);
    return b;
}

nlohmann::json sample_to_json(const BenchmarkSample& s)
{
    nlohmann::json truth;
    for (PrimitiveKind k : kAllKinds) truth[std::string(kind_slug(k))] = std::string(s.truth[k].name());
    return {{"origin", s.window.origin_index},
            {"window", to_std(s.window.x_obs)},
            {"horizon", s.window.y_fut ? to_std(*s.window.y_fut) : std::vector<double>{}},
            {"tokens", s.text.tokens},
            {"sig_idx", s.text.sig_idx},
            {"red_idx", s.text.red_idx},
            {"n_redundant", s.n_redundant},
            {"truth", truth},
            {"stats", stats_to_json(s.stats)}};
}

BenchmarkSample sample_from_json(const nlohmann::json& j)
{
    BenchmarkSample s;
    s.window.origin_index = j.at("origin").get<Eigen::Index>();
    s.window.x_obs = from_std(j.at("window").get<std::vector<double>>());
    const auto h = j.at("horizon").get<std::vector<double>>();
    if (!h.empty()) s.window.y_fut = from_std(h);
    s.text.tokens = j.at("tokens").get<std::vector<std::string>>();
    s.text.sig_idx = j.at("sig_idx").get<std::vector<std::size_t>>();
    s.text.red_idx = j.at("red_idx").get<std::vector<std::size_t>>();
    s.n_redundant = j.value("n_redundant", 0);
    for (PrimitiveKind k : kAllKinds)
        s.truth[k] = PrimitiveLabel::parse(k, j.at("truth").at(std::string(kind_slug(k))).get<std::string>());
    s.stats = stats_from_json(j.at("stats"));
    return s;
}

void save_split(const std::filesystem::path& path, std::span<const BenchmarkSample> samples)
{
    std::string out;
    for (const BenchmarkSample& s : samples) out += sample_to_json(s).dump() + "\n";
    write_file_atomic(path, out);
}

std::vector<BenchmarkSample> load_split(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw Error("cannot open benchmark split " + path.string());
    std::vector<BenchmarkSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Vector token_attention(const Matrix& alpha)
{
    detail::require(alpha.rows() > 0 && alpha.cols() > 0, "token_attention: empty attention matrix");
    return alpha.colwise().mean().transpose();
}

FocusRatio focus_ratio(const Vector& alpha, std::span<const std::size_t> sig_idx,
                       std::span<const std::size_t> red_idx)
{
    if (sig_idx.empty()) throw InvalidArgument("focus_ratio: empty signal set");
    if (red_idx.empty()) throw InvalidArgument("focus_ratio: empty redundant set");
    auto sum_over = [&](std::span<const std::size_t> idx, const char* which) {
        double s = 0;
        for (std::size_t i : idx) {
            if (i >= static_cast<std::size_t>(alpha.size()))
                throw InvalidArgument(std::string("focus_ratio: ") + which + " index " + std::to_string(i)
                                      + " out of range");
            const double a = alpha[static_cast<Eigen::Index>(i)];
            if (a < 0) throw InvalidArgument("focus_ratio: negative attention weight");
            s += a;
        }
        return s;
    };
    const double n_sig = static_cast<double>(sig_idx.size()), n_red = static_cast<double>(red_idx.size());
    const double sum_sig = sum_over(sig_idx, "signal"), sum_red = sum_over(red_idx, "redundant");
    FocusRatio r;
    r.mean_sig = sum_sig / n_sig;
    r.mean_red = sum_red / n_red;
    if (sum_red == 0) {
        r.value = std::numeric_limits<double>::infinity();
        r.warning = "focus_ratio: redundant attention is zero; returning +inf";
        return r;
    }
    r.value = std::log(sum_sig * n_red) - std::log(sum_red * n_sig);
    return r;
}

DiagnosticReport run_attention_diagnostic(const BaselineFusionModel& baseline,
                                          std::span<const BenchmarkSample> samples)
{
    DiagnosticReport rep;
    std::vector<double> finite;
    std::map<int, RedundancyBucket> buckets;
    std::size_t negative = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const BenchmarkSample& s = samples[i];
        detail::require(s.window.y_fut.has_value(), "diagnostic: sample without forecast segment");
        const Vector& y = *s.window.y_fut;
        const std::vector<int> ids = token_ids(s.text.tokens);
        const BaselineFusionModel::Output with = baseline.forward(s.window.x_obs, ids);
        const BaselineFusionModel::Output without = baseline.forward_time_only(s.window.x_obs);

        DiagnosticRow row;
        row.sample = i;
        row.n_redundant = s.n_redundant;
        row.n_sig = s.text.sig_idx.size();
        row.n_red = s.text.red_idx.size();
        row.focus = focus_ratio(token_attention(with.alpha), s.text.sig_idx, s.text.red_idx).value;
        const double h = static_cast<double>(y.size());
        row.mse_with_text = (with.y_hat.value().row(0).transpose() - y).squaredNorm() / h;
        row.mse_without_text = (without.y_hat.value().row(0).transpose() - y).squaredNorm() / h;
        row.gain = row.mse_without_text - row.mse_with_text;
        rep.rows.push_back(row);

        if (row.focus < 0) ++negative;
        if (std::isfinite(row.focus)) finite.push_back(row.focus);
        RedundancyBucket& b = buckets[row.n_redundant];
        b.n_redundant = row.n_redundant;
        b.count += 1;
        b.mean_gain += row.gain;
        b.mean_focus += row.focus;
    }
    if (!samples.empty()) rep.fraction_negative = static_cast<double>(negative) / static_cast<double>(samples.size());
    if (!finite.empty()) {
        double total = 0;
        for (double v : finite) total += v;
        rep.mean_focus = total / static_cast<double>(finite.size());
        std::sort(finite.begin(), finite.end());
        const std::size_t n = finite.size();
        rep.median_focus = n % 2 ? finite[n / 2] : 0.5 * (finite[n / 2 - 1] + finite[n / 2]);
    }
    for (auto& [n, b] : buckets) {
        b.mean_gain /= static_cast<double>(b.count);
        b.mean_focus /= static_cast<double>(b.count);
        rep.by_redundancy.push_back(b);
    }
    return rep;
}

} // namespace tess::bench
