#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "auditkit/data.hpp"

namespace audit {

// The three language registers each clinical case is authored in.
enum class Register { standard_english, nigerian_pidgin, yoruba_english };

// Canonical iteration order: English first, so per-case processing always
// has the English outcome in hand before the other registers compare
// against it.
const std::vector<Register>& all_registers();

// Wire key used in corpus and fixture files: "english", "pidgin",
// "yoruba_english".
std::string register_key(Register reg);

// Human-facing name used in reports: "Standard English", "Nigerian
// Pidgin", "Yoruba-inflected English".
std::string register_name(Register reg);

Register register_from_key(const std::string& key);

// One clinical vignette in one register. `reg` is short for register,
// which the language reserves.
struct Vignette {
    int case_id = 0;
    Register reg = Register::standard_english;
    std::string text;
    ClassLabel truth;
};

struct CorpusManifest {
    // Sorted by case_id, then register in canonical order.
    std::vector<Vignette> cases;
    std::vector<ClassLabel> labels;

    int case_count() const;
    std::vector<int> case_ids() const;
    const Vignette& at(int case_id, Register reg) const;

    // Distinct cases per label index; each case counted once, not once
    // per register.
    std::vector<int> class_distribution() const;

    // Every case must appear in all three registers with one shared
    // truth; violations name the offending case_id.
    void check_invariants() const;
};

// Reads a JSON array of {case_id, register, text, truth} records and
// validates it into a manifest.
CorpusManifest load_corpus(const std::string& json_path);
CorpusManifest load_corpus(const std::string& json_path, const std::vector<ClassLabel>& labels);

// Deterministic single-turn prompt: fixed instruction, the vignette text
// verbatim, then the closed answer set listing each label string exactly
// once. Identical inputs give identical bytes.
std::string build_prompt(const Vignette& v, const std::vector<ClassLabel>& labels);

struct InferenceEndpoint {
    std::string base_url = "http://127.0.0.1:11434";
    std::string model_name = "llama3.1:8b";
    double temperature = 0.0;
    double timeout_seconds = 30.0;
    // Retries after the first attempt, so at most max_retries + 1 requests
    // go out per completion.
    int max_retries = 3;

    void check_invariants() const;
};

// Replaces base_url and model_name with the AUDIT_ENDPOINT_URL and
// AUDIT_MODEL_NAME environment variables when they are set and non-empty.
InferenceEndpoint apply_env_overrides(InferenceEndpoint endpoint);

struct QueryResult {
    std::string raw_response;
    // Requests actually sent, including the successful one.
    int attempt_count = 0;
};

// One non-streaming completion: POST {base_url}/api/generate with body
// {model, prompt, stream:false, options:{temperature}}; the reply's
// "response" field is returned verbatim. Connection failures, timeouts,
// and 5xx statuses are retried with exponential backoff; 4xx statuses and
// exhausted retries raise endpoint_error carrying the status and a body
// excerpt.
QueryResult query(const InferenceEndpoint& endpoint, const std::string& prompt);

// Case-insensitive label extraction. Canonical label strings are tried
// longest first as whole-word phrases, so a "Non-COVID Pneumonia" mention
// can never fall through to COVID-19 via its substring. If no canonical
// string appears, a small synonym table runs in priority order: covid and
// sars-cov-2 wording maps to COVID-19, bare pneumonia without a covid
// qualifier to Non-COVID Pneumonia, and no-findings or healthy wording to
// Normal. Anything else, refusals included, is Unparseable (nullopt).
std::optional<ClassLabel> parse_label(const std::string& raw_response,
                                      const std::vector<ClassLabel>& labels);

// Transport abstraction over the completion endpoint, so audits run
// identically against live HTTP and recorded fixtures.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual QueryResult complete(const Vignette& v, const std::string& prompt) = 0;
    virtual const std::string& model_name() const = 0;
};

// Live transport. Safe to call from several threads at once; each
// completion opens its own connection.
class HttpCompletionClient : public CompletionClient {
public:
    explicit HttpCompletionClient(InferenceEndpoint endpoint);
    QueryResult complete(const Vignette& v, const std::string& prompt) override;
    const std::string& model_name() const override;
    const InferenceEndpoint& endpoint() const { return endpoint_; }

private:
    InferenceEndpoint endpoint_;
};

// Scripted transport for offline runs: responses keyed by (case_id,
// register). A missing key raises endpoint_error, which strict audits
// treat like any other endpoint failure.
class FixtureClient : public CompletionClient {
public:
    FixtureClient(std::string model_name,
                  std::map<std::pair<int, Register>, std::string> responses);

    // File format: {"model": name, "responses": {"<case_id>": {"<register
    // key>": response, ...}, ...}}.
    static FixtureClient load(const std::string& json_path);

    QueryResult complete(const Vignette& v, const std::string& prompt) override;
    const std::string& model_name() const override;

private:
    std::string model_name_;
    std::map<std::pair<int, Register>, std::string> responses_;
};

// Outcome of one instance. `consistent_with_english` is empty for the
// English register itself, and false whenever either side of the
// comparison is Unparseable; an unparsed answer matches nothing, not even
// another unparsed answer.
struct CaseOutcome {
    int case_id = 0;
    Register reg = Register::standard_english;
    std::string raw_response;
    std::optional<ClassLabel> parsed;
    bool correct = false;
    std::optional<bool> consistent_with_english;
    int attempt_count = 0;
};

struct RegisterSummary {
    Register reg = Register::standard_english;
    int correct_count = 0;
    int consistent_count = 0;
    double accuracy = 0.0;
    // English consistency is 1.0 by definition, not by tally; for the
    // other registers it is consistent_count over the case count.
    double consistency = 0.0;
};

struct DriftProfile {
    std::string model_name;
    int case_count = 0;
    std::vector<int> case_ids;
    std::vector<RegisterSummary> registers;
    // Case-major, register-minor, same order the queries were issued in.
    std::vector<CaseOutcome> outcomes;
    // Cases whose parsed labels differ somewhere across the three
    // registers; Unparseable counts as its own value.
    std::vector<int> flip_cases;

    const RegisterSummary& summary(Register reg) const;
    const CaseOutcome& outcome(int case_id, Register reg) const;
};

// strict aborts the audit on the first endpoint failure; lenient records
// the failure as an Unparseable outcome whose raw_response carries the
// error text, and keeps going.
enum class FailureMode { strict, lenient };

// Queries every instance in case-then-register order and scores the grid.
// parallelism above 1 issues completions from a bounded worker pool;
// outcomes are keyed by instance slot, so the profile is byte-identical
// to a sequential run against the same deterministic endpoint.
DriftProfile run_drift_audit(CompletionClient& client, const CorpusManifest& corpus,
                             FailureMode mode = FailureMode::strict, int parallelism = 1);

// Live-endpoint convenience wrapper. Audit runs demand temperature 0.
DriftProfile run_drift_audit(const InferenceEndpoint& endpoint, const CorpusManifest& corpus,
                             FailureMode mode = FailureMode::strict, int parallelism = 1);

// Side-by-side register table for two or more profiles over the same
// corpus: per-model accuracy, consistency, and drop from the English
// baseline in percentage points.
struct ModelComparison {
    struct Row {
        Register reg = Register::standard_english;
        std::vector<double> accuracy;
        std::vector<double> consistency;
        std::vector<double> drop_pp;
    };
    std::vector<std::string> model_names;
    std::vector<Row> rows;

    const Row& row(Register reg) const;
};

ModelComparison compare_models(const std::vector<DriftProfile>& profiles);

}  // namespace audit
