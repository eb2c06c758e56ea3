#include "tess/llm.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

namespace tess {

namespace {

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s)
{
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string candidate_list(PrimitiveKind kind)
{
    std::string out = "<";
    const auto names = candidates(kind);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out += " | ";
        out += names[i];
    }
    return out + ">";
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL)
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double unit_from_hash(std::uint64_t h)
{
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Calls fn up to 1 + max_retries times with exponential backoff. Mode errors
// and parse errors are not transport failures and propagate immediately.
template <typename Fn>
auto with_retries(const EndpointConfig& cfg, Fn&& fn) -> decltype(fn())
{
    const int attempts = 1 + std::max(0, cfg.max_retries);
    double delay = cfg.retry_base_s;
    std::string last;
    for (int a = 1; a <= attempts; ++a) {
        try {
            return fn();
        } catch (const ModeUnsupported&) {
            throw;
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            last = e.what();
        }
        if (a < attempts && delay > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            delay *= 2;
        }
    }
    throw BackendError("backend failed after " + std::to_string(attempts)
                           + " attempts: " + last,
                       attempts);
}

} // namespace

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

std::string build_prompt(const PromptSpec& spec)
{
    if (trim(spec.text_content).empty()) throw InvalidArgument("build_prompt: empty text");
    detail::require(!trim(spec.role_description).empty(), "build_prompt: empty role");
    detail::require(!trim(spec.domain_context).empty(), "build_prompt: empty domain context");

    const std::string mean = candidate_list(PrimitiveKind::MeanShift);
    const std::string vol = candidate_list(PrimitiveKind::Volatility);
    const std::string shape = candidate_list(PrimitiveKind::Shape);
    const std::string lag = candidate_list(PrimitiveKind::Lag);

    std::ostringstream p;
    p << "You are a professional " << spec.role_description << ".\n"
      << "Your task is to analyze the provided textual information and\n"
      << "infer temporal evolution patterns that may impact future time series behavior.\n"
      << "\n"
      << "Textual Input: " << spec.text_content << "\n"
      << "Domain Context: " << spec.domain_context << "\n"
      << "\n"
      << "Instructions:\n"
      << "Based on the textual content provided below, analyze and classify\n"
      << "the following four temporal evolution primitives:\n"
      << "\n"
      << "1. Mean Shift - Infer the direction and magnitude of anticipated\n"
      << "   level changes:\n"
      << "   " << mean << "\n"
      << "\n"
      << "2. Volatility - Infer the anticipated changes in volatility regime:\n"
      << "   " << vol << "\n"
      << "\n"
      << "3. Shape - Infer the dominant trend morphology pattern over the\n"
      << "   forecast horizon:\n"
      << "   " << shape << "\n"
      << "\n"
      << "4. Lag and Decay - Infer the temporal localization and persistence\n"
      << "   of the impact:\n"
      << "   " << lag << "\n"
      << "\n"
      << "You MUST output in the following EXACT format with no extra text:\n"
      << "\n"
      << "Mean Shift: " << mean << "\n"
      << "Volatility: " << vol << "\n"
      << "Shape: " << shape << "\n"
      << "Lag: " << lag << "\n"
      << "\n"
      << "Provide your analysis in the exact format specified above.\n";
    return p.str();
}

std::string scoring_context(const std::string& prompt, PrimitiveKind kind)
{
    return prompt + "\n" + std::string(output_key(kind)) + ": ";
}

std::string prompt_text_section(const std::string& prompt)
{
    static const std::string kBegin = "Textual Input: ";
    static const std::string kEnd = "\nDomain Context:";
    const auto b = prompt.find(kBegin);
    if (b == std::string::npos) return prompt;
    const auto start = b + kBegin.size();
    const auto e = prompt.find(kEnd, start);
    return prompt.substr(start, e == std::string::npos ? std::string::npos : e - start);
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

bool Extraction::complete() const
{
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.has_value(); });
}

LabelDistribution temper_softmax(const LabelScores& scores, double temperature)
{
    if (!(temperature > 0)) throw InvalidArgument("temper_softmax: temperature must be > 0");
    detail::require(static_cast<std::size_t>(scores.scores.size()) == candidate_count(scores.kind),
                    "temper_softmax: score count does not match candidate set");
    if (!scores.scores.allFinite()) throw InvalidArgument("temper_softmax: non-finite score");
    const Eigen::ArrayXd z = (scores.scores.array() - scores.scores.maxCoeff()) / temperature;
    const Eigen::ArrayXd e = z.exp();
    return LabelDistribution{scores.kind, (e / e.sum()).matrix(), temperature};
}

PrimitiveLabel predict_label(const LabelDistribution& dist)
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < dist.probs.size(); ++i) {
        if (dist.probs[i] > dist.probs[best]) best = i;
    }
    return PrimitiveLabel(dist.kind, static_cast<std::size_t>(best));
}

double margin(const LabelDistribution& dist)
{
    detail::require(dist.probs.size() >= 2, "margin: need at least two candidates");
    std::vector<double> p(dist.probs.data(), dist.probs.data() + dist.probs.size());
    std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
    return std::log(p[0]) - std::log(p[1]);
}

LabelDistribution peaked_distribution(const PrimitiveLabel& label, double delta)
{
    detail::require(delta > 0 && delta < 1, "peaked_distribution: delta must lie in (0,1)");
    const auto n = static_cast<Eigen::Index>(candidate_count(label.kind()));
    LabelDistribution d{label.kind(), Vector::Constant(n, delta / static_cast<double>(n - 1)), 1.0};
    d.probs[static_cast<Eigen::Index>(label.index())] = 1.0 - delta;
    return d;
}

ExtractionResult make_result(LabelDistribution dist, std::string backend_id, bool cached)
{
    ExtractionResult r;
    r.kind = dist.kind;
    r.predicted = predict_label(dist);
    r.margin = margin(dist);
    r.distribution = std::move(dist);
    r.backend_id = std::move(backend_id);
    r.cached = cached;
    return r;
}

// ---------------------------------------------------------------------------
// Structured responses
// ---------------------------------------------------------------------------

ParsedResponse scan_structured_response(const std::string& text)
{
    ParsedResponse out;
    std::array<int, kNumKinds> seen_line{};
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = lower(trim(std::string_view(line).substr(0, colon)));
        for (PrimitiveKind k : kAllKinds) {
            if (key != lower(output_key(k))) continue;
            const std::size_t i = index_of(k);
            const std::string where = "line " + std::to_string(lineno) + " '" + trim(line) + "'";
            if (seen_line[i] != 0) {
                out.labels[i].reset();
                out.errors[i] = "duplicate key '" + std::string(output_key(k)) + "' at " + where
                                + " (first at line " + std::to_string(seen_line[i]) + ")";
                seen_line[i] = -1;
                break;
            }
            if (seen_line[i] < 0) break;
            seen_line[i] = lineno;
            std::string value = trim(std::string_view(line).substr(colon + 1));
            if (value.size() >= 2 && value.front() == '<' && value.back() == '>')
                value = trim(std::string_view(value).substr(1, value.size() - 2));
            try {
                out.labels[i] = PrimitiveLabel::parse(k, value);
            } catch (const ParseError&) {
                out.errors[i] = "out-of-domain value '" + value + "' at " + where;
            }
            break;
        }
    }
    for (PrimitiveKind k : kAllKinds) {
        const std::size_t i = index_of(k);
        if (seen_line[i] == 0)
            out.errors[i] = "missing key '" + std::string(output_key(k)) + "'";
    }
    return out;
}

PrimitiveVector parse_structured_response(const std::string& text)
{
    const ParsedResponse parsed = scan_structured_response(text);
    PrimitiveVector v;
    for (PrimitiveKind k : kAllKinds) {
        const std::size_t i = index_of(k);
        if (!parsed.errors[i].empty()) throw ParseError(parsed.errors[i]);
        v[k] = *parsed.labels[i];
    }
    return v;
}

std::string render_structured_response(const PrimitiveVector& labels)
{
    std::string out;
    for (PrimitiveKind k : kAllKinds) {
        out += std::string(output_key(k)) + ": " + std::string(labels[k].name()) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string_view to_string(ScoringMode mode)
{
    return mode == ScoringMode::Logprob ? "logprob" : "parse";
}

ScoringMode scoring_mode_from_string(std::string_view s)
{
    if (s == "logprob") return ScoringMode::Logprob;
    if (s == "parse") return ScoringMode::Parse;
    throw InvalidArgument("unknown scoring mode '" + std::string(s) + "'");
}

void EndpointConfig::validate() const
{
    detail::require(timeout_s > 0, "EndpointConfig: timeout_s must be > 0");
    detail::require(max_parallel_requests >= 1, "EndpointConfig: max_parallel_requests must be >= 1");
    detail::require(max_retries >= 0, "EndpointConfig: max_retries must be >= 0");
    detail::require(!model_name.empty(), "EndpointConfig: empty model name");
}

void to_json(nlohmann::json& j, const EndpointConfig& c)
{
    j = {{"base_url", c.base_url},
         {"model_name", c.model_name},
         {"api_key_env_var", c.api_key_env_var},
         {"timeout_s", c.timeout_s},
         {"max_retries", c.max_retries},
         {"max_parallel_requests", c.max_parallel_requests},
         {"scoring_mode", to_string(c.scoring_mode)},
         {"retry_base_s", c.retry_base_s}};
}

void from_json(const nlohmann::json& j, EndpointConfig& c)
{
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.api_key_env_var = j.value("api_key_env_var", c.api_key_env_var);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_parallel_requests = j.value("max_parallel_requests", c.max_parallel_requests);
    c.scoring_mode = scoring_mode_from_string(j.value("scoring_mode", std::string("logprob")));
    c.retry_base_s = j.value("retry_base_s", c.retry_base_s);
}

void to_json(nlohmann::json& j, const ExtractionConfig& c)
{
    j = {{"endpoint", c.endpoint},
         {"temperature", c.temperature},
         {"delta_parse", c.delta_parse},
         {"role", c.role},
         {"domain_context", c.domain_context}};
}

void from_json(const nlohmann::json& j, ExtractionConfig& c)
{
    if (j.contains("endpoint")) c.endpoint = j.at("endpoint").get<EndpointConfig>();
    c.temperature = j.value("temperature", c.temperature);
    c.delta_parse = j.value("delta_parse", c.delta_parse);
    c.role = j.value("role", c.role);
    c.domain_context = j.value("domain_context", c.domain_context);
}

// ---------------------------------------------------------------------------
// Tokens, hashing, cache
// ---------------------------------------------------------------------------

std::vector<std::string> label_tokens(std::string_view label)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : label) {
        if (c == '-') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            out.emplace_back("-");
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u) || std::ispunct(u)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += static_cast<char>(std::tolower(u));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string sha256_hex(std::string_view data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i)
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return os.str();
}

std::string cache_key(std::string_view model_name, std::string_view request, ScoringMode mode)
{
    std::string buf;
    buf.reserve(model_name.size() + request.size() + 16);
    buf.append(model_name).push_back('\0');
    buf.append(request).push_back('\0');
    buf.append(to_string(mode));
    return sha256_hex(buf);
}

ResponseCache::ResponseCache(std::filesystem::path file) : m_file(std::move(file))
{
    std::ifstream in(*m_file);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("key") || !rec.contains("response")) {
            ++m_malformed;
            continue;
        }
        m_entries[rec["key"].get<std::string>()] = rec["response"];
    }
}

std::optional<nlohmann::json> ResponseCache::lookup(const std::string& key) const
{
    std::shared_lock lock(m_mutex);
    const auto it = m_entries.find(key);
    if (it == m_entries.end()) return std::nullopt;
    return it->second;
}

void ResponseCache::store(const std::string& key, const nlohmann::json& response)
{
    std::lock_guard append(m_append);
    {
        std::unique_lock lock(m_mutex);
        if (!m_entries.emplace(key, response).second) return;
    }
    if (m_file) {
        std::ofstream out(*m_file, std::ios::app);
        out << nlohmann::json{{"key", key}, {"response", response}, {"timestamp", utc_now()}}.dump()
            << "\n";
        if (!out) throw Error("cannot append to cache file " + m_file->string());
    }
}

std::size_t ResponseCache::size() const
{
    std::shared_lock lock(m_mutex);
    return m_entries.size();
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(EndpointConfig cfg) : m_cfg(std::move(cfg))
{
    m_cfg.validate();
    const auto scheme = m_cfg.base_url.find("://");
    detail::require(scheme != std::string::npos, "HttpBackend: base_url needs a scheme");
    const auto path = m_cfg.base_url.find('/', scheme + 3);
    m_origin = m_cfg.base_url.substr(0, path);
    m_prefix = path == std::string::npos ? "" : m_cfg.base_url.substr(path);
    while (!m_prefix.empty() && m_prefix.back() == '/') m_prefix.pop_back();
    if (const char* key = std::getenv(m_cfg.api_key_env_var.c_str())) m_api_key = key;
}

nlohmann::json HttpBackend::post(const std::string& path, const nlohmann::json& body)
{
    count_call();
    httplib::Client cli(m_origin);
    const auto secs = static_cast<time_t>(m_cfg.timeout_s);
    const auto usecs = static_cast<time_t>((m_cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    httplib::Headers headers;
    if (!m_api_key.empty()) headers.emplace("Authorization", "Bearer " + m_api_key);
    auto res = cli.Post(m_prefix + path, headers, body.dump(), "application/json");
    if (!res) throw Error("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error("HTTP " + std::to_string(res->status) + " from " + m_prefix + path);
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw Error("non-JSON response from " + m_prefix + path);
    return parsed;
}

std::vector<double> HttpBackend::continuation_logprobs(const std::string& context,
                                                       const std::string& continuation)
{
    const nlohmann::json body = {{"model", m_cfg.model_name},
                                 {"prompt", context + continuation},
                                 {"echo", true},
                                 {"max_tokens", 0},
                                 {"logprobs", 1},
                                 {"temperature", 0}};
    const nlohmann::json res = post("/completions", body);
    const nlohmann::json* lp = nullptr;
    if (res.contains("choices") && !res["choices"].empty() && res["choices"][0].contains("logprobs"))
        lp = &res["choices"][0]["logprobs"];
    if (!lp || lp->is_null() || !lp->contains("token_logprobs") || !lp->contains("text_offset"))
        throw ModeUnsupported("backend " + id()
                              + " does not report token log-probabilities; use scoring_mode=parse");
    const auto& offsets = (*lp)["text_offset"];
    const auto& values = (*lp)["token_logprobs"];
    std::vector<double> out;
    for (std::size_t i = 0; i < offsets.size() && i < values.size(); ++i) {
        if (offsets[i].get<std::size_t>() >= context.size() && !values[i].is_null())
            out.push_back(values[i].get<double>());
    }
    if (out.empty()) throw ModeUnsupported("backend " + id() + " returned no continuation tokens");
    return out;
}

std::string HttpBackend::complete(const std::string& prompt)
{
    const nlohmann::json body = {
        {"model", m_cfg.model_name},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", 0}};
    const nlohmann::json res = post("/chat/completions", body);
    try {
        return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("chat completion response lacks choices[0].message.content");
    }
}

ScriptedBackend::ScriptedBackend(TokenTable table, std::string completion, bool logprobs)
  : m_table(std::move(table)), m_completion(std::move(completion)), m_logprobs(logprobs)
{ }

std::vector<double> ScriptedBackend::continuation_logprobs(const std::string& context,
                                                           const std::string& continuation)
{
    count_call();
    if (m_failures > 0) {
        --m_failures;
        throw Error("scripted transport failure");
    }
    if (!m_logprobs) throw ModeUnsupported("scripted backend has no log-probabilities; use parse mode");
    for (PrimitiveKind k : kAllKinds) {
        const std::string suffix = "\n" + std::string(output_key(k)) + ": ";
        if (context.size() >= suffix.size()
            && context.compare(context.size() - suffix.size(), suffix.size(), suffix) == 0) {
            const auto it = m_table.find({k, continuation});
            if (it == m_table.end()) throw Error("scripted backend: no entry for " + continuation);
            return it->second;
        }
    }
    throw Error("scripted backend: context does not end with an output key");
}

std::string ScriptedBackend::complete(const std::string&)
{
    count_call();
    if (m_failures > 0) {
        --m_failures;
        throw Error("scripted transport failure");
    }
    return m_completion;
}

LexiconBackend::LexiconBackend(Lexicon lexicon, double error_rate)
  : m_lexicon(std::move(lexicon)), m_error_rate(error_rate)
{ }

Vector LexiconBackend::label_scores(const std::string& text, PrimitiveKind kind) const
{
    const std::vector<std::string> tokens = tokenize(text);
    const auto& cues = m_lexicon[index_of(kind)];
    const auto n = static_cast<Eigen::Index>(candidate_count(kind));

    auto contains = [&](const std::vector<std::string>& phrase) {
        if (phrase.empty() || phrase.size() > tokens.size()) return false;
        return std::search(tokens.begin(), tokens.end(), phrase.begin(), phrase.end())
               != tokens.end();
    };

    const std::uint64_t h = fnv1a(text, fnv1a(kind_slug(kind)));
    Vector s(n);
    for (Eigen::Index i = 0; i < n; ++i)
        s[i] = -3.0 - 0.5 * unit_from_hash(h + static_cast<std::uint64_t>(i) * 7919);

    Eigen::Index found = -1;
    for (Eigen::Index i = 0; i < n && i < static_cast<Eigen::Index>(cues.size()); ++i) {
        if (contains(cues[static_cast<std::size_t>(i)])) {
            found = i;
            break;
        }
    }
    if (found < 0) {
        // Nothing recognisable: nearly flat scores.
        for (Eigen::Index i = 0; i < n; ++i)
            s[i] = -2.0 - 0.3 * unit_from_hash(h ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
        return s;
    }
    if (unit_from_hash(h ^ 0xabcdefULL) < m_error_rate) {
        const auto shift = 1 + static_cast<Eigen::Index>(unit_from_hash(h ^ 0x1234ULL)
                                                         * static_cast<double>(n - 1));
        const Eigen::Index wrong = (found + shift) % n;
        s[wrong] = -0.4 - 0.3 * unit_from_hash(h ^ 0x55ULL);
        s[found] = s[wrong] - 0.1 - 0.3 * unit_from_hash(h ^ 0x77ULL);
    } else {
        s[found] = -0.05 - 0.2 * unit_from_hash(h ^ 0x99ULL);
    }
    return s;
}

std::vector<double> LexiconBackend::continuation_logprobs(const std::string& context,
                                                          const std::string& continuation)
{
    count_call();
    for (PrimitiveKind k : kAllKinds) {
        const std::string suffix = "\n" + std::string(output_key(k)) + ": ";
        if (context.size() < suffix.size()
            || context.compare(context.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        const PrimitiveLabel label = PrimitiveLabel::parse(k, continuation);
        const Vector s = label_scores(prompt_text_section(context), k);
        const auto toks = label_tokens(continuation);
        return std::vector<double>(toks.size(),
                                   s[static_cast<Eigen::Index>(label.index())]
                                       / static_cast<double>(toks.size()));
    }
    throw Error("lexicon backend: context does not end with an output key");
}

std::string LexiconBackend::complete(const std::string& prompt)
{
    count_call();
    const std::string text = prompt_text_section(prompt);
    PrimitiveVector v;
    for (PrimitiveKind k : kAllKinds) {
        const Vector s = label_scores(text, k);
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < s.size(); ++i)
            if (s[i] > s[best]) best = i;
        v[k] = PrimitiveLabel(k, static_cast<std::size_t>(best));
    }
    return render_structured_response(v);
}

// ---------------------------------------------------------------------------
// Scoring and extraction
// ---------------------------------------------------------------------------

LabelScores score_candidates(CompletionBackend& backend, ResponseCache* cache,
                             const EndpointConfig& cfg, const std::string& prompt,
                             PrimitiveKind kind)
{
    const std::string context = scoring_context(prompt, kind);
    const auto names = candidates(kind);
    LabelScores out{kind, Vector(static_cast<Eigen::Index>(names.size())), true};
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string cont(names[i]);
        const std::string key = cache_key(cfg.model_name, context + '\x1f' + cont,
                                          ScoringMode::Logprob);
        std::vector<double> lps;
        if (auto hit = cache ? cache->lookup(key) : std::nullopt) {
            lps = hit->get<std::vector<double>>();
        } else {
            out.from_cache = false;
            if (!backend.supports_logprobs())
                throw ModeUnsupported("backend " + backend.id()
                                      + " lacks token log-probabilities; use scoring_mode=parse");
            lps = with_retries(cfg, [&] { return backend.continuation_logprobs(context, cont); });
            if (cache) cache->store(key, lps);
        }
        double total = 0;
        for (double v : lps) total += v;
        out.scores[static_cast<Eigen::Index>(i)] = total;
    }
    return out;
}

std::string cached_completion(CompletionBackend& backend, ResponseCache* cache,
                              const EndpointConfig& cfg, const std::string& prompt,
                              bool* from_cache)
{
    const std::string key = cache_key(cfg.model_name, prompt, ScoringMode::Parse);
    if (auto hit = cache ? cache->lookup(key) : std::nullopt) {
        if (from_cache) *from_cache = true;
        return hit->get<std::string>();
    }
    if (from_cache) *from_cache = false;
    std::string text = with_retries(cfg, [&] { return backend.complete(prompt); });
    if (cache) cache->store(key, text);
    return text;
}

Extraction extract(CompletionBackend& backend, ResponseCache* cache, const std::string& text,
                   const ExtractionConfig& cfg)
{
    Extraction out;
    if (trim(text).empty()) {
        out.errors.fill("no text");
        return out;
    }
    const std::string prompt = build_prompt({cfg.role, cfg.domain_context, text});

    if (cfg.endpoint.scoring_mode == ScoringMode::Logprob) {
        for (PrimitiveKind k : kAllKinds) {
            const std::size_t i = index_of(k);
            try {
                LabelScores s = score_candidates(backend, cache, cfg.endpoint, prompt, k);
                out.results[i] = make_result(temper_softmax(s, cfg.temperature), backend.id(),
                                             s.from_cache);
            } catch (const ModeUnsupported&) {
                throw;
            } catch (const Error& e) {
                out.errors[i] = e.what();
            }
        }
        return out;
    }

    bool hit = false;
    std::string response;
    try {
        response = cached_completion(backend, cache, cfg.endpoint, prompt, &hit);
    } catch (const Error& e) {
        out.errors.fill(e.what());
        return out;
    }
    const ParsedResponse parsed = scan_structured_response(response);
    for (PrimitiveKind k : kAllKinds) {
        const std::size_t i = index_of(k);
        if (parsed.labels[i])
            out.results[i] = make_result(peaked_distribution(*parsed.labels[i], cfg.delta_parse),
                                         backend.id(), hit);
        else
            out.errors[i] = parsed.errors[i];
    }
    return out;
}

std::vector<Extraction> extract_batch(CompletionBackend& backend, ResponseCache* cache,
                                      std::span<const std::string> texts,
                                      const ExtractionConfig& cfg)
{
    cfg.endpoint.validate();
    std::vector<Extraction> out(texts.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr failure;

    auto worker = [&] {
        for (std::size_t i = next++; i < texts.size(); i = next++) {
            try {
                out[i] = extract(backend, cache, texts[i], cfg);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.endpoint.max_parallel_requests), std::max<std::size_t>(1, texts.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

Extraction oracle_extraction(const PrimitiveVector& labels, double delta)
{
    Extraction out;
    for (PrimitiveKind k : kAllKinds)
        out.results[index_of(k)] = make_result(peaked_distribution(labels[k], delta), "oracle", false);
    return out;
}

void to_json(nlohmann::json& j, const Extraction& e)
{
    j = nlohmann::json::object();
    for (PrimitiveKind k : kAllKinds) {
        const auto& r = e[k];
        const std::string slug(kind_slug(k));
        if (!r) {
            j[slug] = {{"missing", true}, {"error", e.errors[index_of(k)]}};
            continue;
        }
        std::vector<double> probs(r->distribution.probs.data(),
                                  r->distribution.probs.data() + r->distribution.probs.size());
        j[slug] = {{"predicted", std::string(r->predicted.name())},
                   {"probs", probs},
                   {"temperature", r->distribution.temperature},
                   {"margin", r->margin},
                   {"backend_id", r->backend_id},
                   {"cached", r->cached}};
    }
}

void from_json(const nlohmann::json& j, Extraction& e)
{
    e = Extraction{};
    for (PrimitiveKind k : kAllKinds) {
        const std::size_t i = index_of(k);
        const std::string slug(kind_slug(k));
        if (!j.contains(slug) || j[slug].value("missing", false)) {
            e.errors[i] = j.contains(slug) ? j[slug].value("error", "missing") : "missing";
            continue;
        }
        const auto& r = j[slug];
        const auto probs = r.at("probs").get<std::vector<double>>();
        LabelDistribution d{k, Eigen::Map<const Vector>(probs.data(), static_cast<Eigen::Index>(probs.size())),
                            r.value("temperature", 1.0)};
        detail::require(static_cast<std::size_t>(d.probs.size()) == candidate_count(k),
                        "extraction record: wrong probability count for " + slug);
        ExtractionResult res = make_result(std::move(d), r.value("backend_id", ""), r.value("cached", false));
        if (res.predicted != PrimitiveLabel::parse(k, r.at("predicted").get<std::string>()))
            throw ParseError("extraction record: predicted label disagrees with argmax for " + slug);
        e.results[i] = std::move(res);
    }
}

} // namespace tess
