#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tess/primitives.hpp"

namespace tess {

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

struct PromptSpec {
    std::string role_description;
    std::string domain_context;
    std::string text_content;
};

/// Renders the fixed extraction template. Byte-identical for equal inputs.
std::string build_prompt(const PromptSpec& spec);

/// The prompt followed by the output-line prefix of `kind` ("...\nShape: ").
/// Candidate labels are scored as continuations of this context.
std::string scoring_context(const std::string& prompt, PrimitiveKind kind);

/// The prompt's own text section, or the whole string if the markers are absent.
std::string prompt_text_section(const std::string& prompt);

// ---------------------------------------------------------------------------
// Scores, distributions, results
// ---------------------------------------------------------------------------

/// Log-likelihood per candidate, indexed in candidates(kind) order.
struct LabelScores {
    PrimitiveKind kind = PrimitiveKind::MeanShift;
    Vector scores;
    bool from_cache = false;
};

struct LabelDistribution {
    PrimitiveKind kind = PrimitiveKind::MeanShift;
    Vector probs;
    double temperature = 1.0;

    double prob(const PrimitiveLabel& label) const { return probs[label.index()]; }
};

struct ExtractionResult {
    PrimitiveKind kind = PrimitiveKind::MeanShift;
    PrimitiveLabel predicted;
    LabelDistribution distribution;
    double margin = 0;
    std::string backend_id;
    bool cached = false;
};

/// Per-kind outcome of one extraction. An empty slot is a missing extraction;
/// its reason is kept in `errors`.
struct Extraction {
    std::array<std::optional<ExtractionResult>, kNumKinds> results;
    std::array<std::string, kNumKinds> errors;

    const std::optional<ExtractionResult>& operator[](PrimitiveKind k) const
    {
        return results[index_of(k)];
    }
    bool complete() const;
};

LabelDistribution temper_softmax(const LabelScores& scores, double temperature = 1.0);
PrimitiveLabel predict_label(const LabelDistribution& dist);
/// log q(top1) - log q(top2).
double margin(const LabelDistribution& dist);

/// Peaked distribution used when only a parsed label is available: mass
/// 1 - delta on `label`, the rest uniform over the other candidates.
LabelDistribution peaked_distribution(const PrimitiveLabel& label, double delta);

ExtractionResult make_result(LabelDistribution dist, std::string backend_id, bool cached);

// ---------------------------------------------------------------------------
// Structured responses
// ---------------------------------------------------------------------------

struct ParsedResponse {
    std::array<std::optional<PrimitiveLabel>, kNumKinds> labels;
    std::array<std::string, kNumKinds> errors;
};

/// Lenient per-kind scan; failures land in `errors` instead of throwing.
ParsedResponse scan_structured_response(const std::string& response_text);

/// Strict: all four keys exactly once with in-domain values, else ParseError
/// naming the offending line.
PrimitiveVector parse_structured_response(const std::string& response_text);

/// Four "Key: value" lines in template order.
std::string render_structured_response(const PrimitiveVector& labels);

// ---------------------------------------------------------------------------
// Backends and cache
// ---------------------------------------------------------------------------

enum class ScoringMode { Logprob, Parse };
std::string_view to_string(ScoringMode mode);
ScoringMode scoring_mode_from_string(std::string_view s);

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model_name = "mock";
    std::string api_key_env_var = "TESS_API_KEY";
    double timeout_s = 60.0;
    int max_retries = 3;
    int max_parallel_requests = 4;
    ScoringMode scoring_mode = ScoringMode::Logprob;
    double retry_base_s = 0.5;

    void validate() const;
};

void to_json(nlohmann::json& j, const EndpointConfig& c);
void from_json(const nlohmann::json& j, EndpointConfig& c);

/// A completion service. Implementations must be safe to call concurrently.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    virtual std::string id() const = 0;
    virtual bool supports_logprobs() const = 0;
    /// Per-token log-probabilities of `continuation` following `context`.
    virtual std::vector<double> continuation_logprobs(const std::string& context,
                                                      const std::string& continuation) = 0;
    virtual std::string complete(const std::string& prompt) = 0;

    std::size_t calls() const { return m_calls.load(); }

protected:
    void count_call() { ++m_calls; }

private:
    std::atomic<std::size_t> m_calls{0};
};

/// OpenAI-style HTTP endpoint. Parse mode posts to {base}/chat/completions;
/// logprob mode posts the scored continuation to {base}/completions with
/// echo so the prompt tokens come back with log-probabilities.
class HttpBackend final : public CompletionBackend {
public:
    explicit HttpBackend(EndpointConfig cfg);

    std::string id() const override { return "http:" + m_cfg.model_name; }
    bool supports_logprobs() const override { return true; }
    std::vector<double> continuation_logprobs(const std::string& context,
                                              const std::string& continuation) override;
    std::string complete(const std::string& prompt) override;

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body);

    EndpointConfig m_cfg;
    std::string m_origin;
    std::string m_prefix;
    std::string m_api_key;
};

/// Fixed per-label token log-probabilities, for tests and fixtures.
class ScriptedBackend final : public CompletionBackend {
public:
    using TokenTable = std::map<std::pair<PrimitiveKind, std::string>, std::vector<double>>;

    ScriptedBackend(TokenTable table, std::string completion, bool logprobs = true);

    std::string id() const override { return "scripted"; }
    bool supports_logprobs() const override { return m_logprobs; }
    std::vector<double> continuation_logprobs(const std::string& context,
                                              const std::string& continuation) override;
    std::string complete(const std::string& prompt) override;

    /// Make the next `n` calls throw a transport error.
    void fail_next(int n) { m_failures = n; }

private:
    TokenTable m_table;
    std::string m_completion;
    bool m_logprobs;
    std::atomic<int> m_failures{0};
};

/// Deterministic offline reader: finds cue phrases for each label in the
/// prompt's text section. A hash of (text, kind) decides, at `error_rate`, to
/// misread with a narrow margin, which gives the gate something to learn.
class LexiconBackend final : public CompletionBackend {
public:
    using Lexicon = std::array<std::vector<std::vector<std::string>>, kNumKinds>;

    explicit LexiconBackend(Lexicon lexicon, double error_rate = 0.0);

    std::string id() const override { return "lexicon-mock"; }
    bool supports_logprobs() const override { return true; }
    std::vector<double> continuation_logprobs(const std::string& context,
                                              const std::string& continuation) override;
    std::string complete(const std::string& prompt) override;

    /// Total log-likelihood the mock assigns to each candidate.
    Vector label_scores(const std::string& text, PrimitiveKind kind) const;

private:
    Lexicon m_lexicon;
    double m_error_rate;
};

/// Split a label into scoring tokens: "early-persist" -> {"early", "-", "persist"}.
std::vector<std::string> label_tokens(std::string_view label);

/// Lowercase, split on whitespace and punctuation.
std::vector<std::string> tokenize(std::string_view text);

std::string sha256_hex(std::string_view data);
std::string cache_key(std::string_view model_name, std::string_view request, ScoringMode mode);

/// Append-only JSON-lines response cache: {key, response, timestamp} per line.
/// Concurrent lookups; appends are serialized.
class ResponseCache {
public:
    ResponseCache() = default;  // memory only
    explicit ResponseCache(std::filesystem::path file);

    std::optional<nlohmann::json> lookup(const std::string& key) const;
    void store(const std::string& key, const nlohmann::json& response);
    std::size_t size() const;
    std::size_t malformed_lines() const { return m_malformed; }

private:
    std::optional<std::filesystem::path> m_file;
    mutable std::shared_mutex m_mutex;
    std::unordered_map<std::string, nlohmann::json> m_entries;
    std::mutex m_append;
    std::size_t m_malformed = 0;
};

// ---------------------------------------------------------------------------
// Scoring and extraction
// ---------------------------------------------------------------------------

struct ExtractionConfig {
    EndpointConfig endpoint;
    double temperature = 1.0;
    double delta_parse = 0.05;
    std::string role = "financial analyst";
    std::string domain_context = "daily market series";
};

void to_json(nlohmann::json& j, const ExtractionConfig& c);
void from_json(const nlohmann::json& j, ExtractionConfig& c);

/// l(v) = sum of token log-probabilities of v after the kind's output line.
LabelScores score_candidates(CompletionBackend& backend, ResponseCache* cache,
                             const EndpointConfig& cfg, const std::string& prompt,
                             PrimitiveKind kind);

/// Cached, retried free-text completion.
std::string cached_completion(CompletionBackend& backend, ResponseCache* cache,
                              const EndpointConfig& cfg, const std::string& prompt,
                              bool* from_cache = nullptr);

Extraction extract(CompletionBackend& backend, ResponseCache* cache, const std::string& text,
                   const ExtractionConfig& cfg);

/// Extract for many texts, up to max_parallel_requests at a time. Empty texts
/// yield all-missing extractions without touching the backend.
std::vector<Extraction> extract_batch(CompletionBackend& backend, ResponseCache* cache,
                                      std::span<const std::string> texts,
                                      const ExtractionConfig& cfg);

/// Oracle extraction from known labels (peaked, delta_parse mass off-label).
Extraction oracle_extraction(const PrimitiveVector& labels, double delta = 0.05);

void to_json(nlohmann::json& j, const Extraction& e);
void from_json(const nlohmann::json& j, Extraction& e);

} // namespace tess
