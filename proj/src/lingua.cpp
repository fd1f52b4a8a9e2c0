#include "auditkit/lingua.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "auditkit/errors.hpp"
#include "auditkit/parallel.hpp"

namespace audit {

namespace {

int register_rank(Register reg) {
    const auto& order = all_registers();
    for (std::size_t i = 0; i < order.size(); ++i)
        if (order[i] == reg) return static_cast<int>(i);
    throw usage_error("unknown register value");
}

std::string describe_case(int case_id, Register reg) {
    return "case " + std::to_string(case_id) + " register '" + register_key(reg) + "'";
}

// Lowercases and reduces every non-alphanumeric run to a single space,
// with one guard space at each end so phrase searches are whole-word.
std::string normalize_for_match(const std::string& text) {
    std::string out = " ";
    bool in_gap = true;
    for (const char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            out.push_back(static_cast<char>(std::tolower(u)));
            in_gap = false;
        } else if (!in_gap) {
            out.push_back(' ');
            in_gap = true;
        }
    }
    if (out.back() != ' ') out.push_back(' ');
    return out;
}

bool contains_phrase(const std::string& normalized_hay, const std::string& phrase) {
    std::string needle = normalize_for_match(phrase);
    return normalized_hay.find(needle) != std::string::npos;
}

const ClassLabel* find_label_named(const std::vector<ClassLabel>& labels, const std::string& name) {
    for (const auto& label : labels)
        if (label.name == name) return &label;
    return nullptr;
}

std::string body_excerpt(const std::string& body) {
    constexpr std::size_t kLimit = 160;
    std::string out = body.substr(0, kLimit);
    for (char& c : out)
        if (c == '\n' || c == '\r') c = ' ';
    if (body.size() > kLimit) out += "...";
    return out;
}

}  // namespace

const std::vector<Register>& all_registers() {
    static const std::vector<Register> order = {
        Register::standard_english,
        Register::nigerian_pidgin,
        Register::yoruba_english,
    };
    return order;
}

std::string register_key(Register reg) {
    switch (reg) {
        case Register::standard_english: return "english";
        case Register::nigerian_pidgin: return "pidgin";
        case Register::yoruba_english: return "yoruba_english";
    }
    throw usage_error("unknown register value");
}

std::string register_name(Register reg) {
    switch (reg) {
        case Register::standard_english: return "Standard English";
        case Register::nigerian_pidgin: return "Nigerian Pidgin";
        case Register::yoruba_english: return "Yoruba-inflected English";
    }
    throw usage_error("unknown register value");
}

Register register_from_key(const std::string& key) {
    for (const Register reg : all_registers())
        if (register_key(reg) == key) return reg;
    throw validation_error("unknown register '" + key +
                           "'; expected english, pidgin, or yoruba_english");
}

int CorpusManifest::case_count() const { return static_cast<int>(case_ids().size()); }

std::vector<int> CorpusManifest::case_ids() const {
    std::set<int> ids;
    for (const auto& v : cases) ids.insert(v.case_id);
    return {ids.begin(), ids.end()};
}

const Vignette& CorpusManifest::at(int case_id, Register reg) const {
    for (const auto& v : cases)
        if (v.case_id == case_id && v.reg == reg) return v;
    throw validation_error("corpus has no vignette for " + describe_case(case_id, reg));
}

std::vector<int> CorpusManifest::class_distribution() const {
    std::vector<int> counts(labels.size(), 0);
    for (const int id : case_ids()) {
        const ClassLabel& truth = at(id, Register::standard_english).truth;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == truth) ++counts[i];
    }
    return counts;
}

void CorpusManifest::check_invariants() const {
    if (labels.empty()) throw validation_error("corpus manifest has no label set");
    if (cases.empty()) throw validation_error("corpus manifest has no vignettes");
    std::map<int, std::vector<const Vignette*>> by_case;
    for (const auto& v : cases) by_case[v.case_id].push_back(&v);
    for (const auto& [id, group] : by_case) {
        std::set<Register> seen;
        for (const Vignette* v : group) {
            if (v->text.empty())
                throw validation_error(describe_case(id, v->reg) + " has empty text");
            if (!seen.insert(v->reg).second)
                throw validation_error(describe_case(id, v->reg) + " appears more than once");
            if (std::find(labels.begin(), labels.end(), v->truth) == labels.end())
                throw validation_error("case " + std::to_string(id) +
                                       " carries a truth label outside the corpus label set: '" +
                                       v->truth.name + "'");
            if (!(v->truth == group.front()->truth))
                throw validation_error("case " + std::to_string(id) +
                                       " has different truth labels across registers");
        }
        for (const Register reg : all_registers())
            if (!seen.count(reg))
                throw validation_error("case " + std::to_string(id) + " is missing register '" +
                                       register_key(reg) + "'");
    }
}

CorpusManifest load_corpus(const std::string& json_path) {
    return load_corpus(json_path, default_labels());
}

CorpusManifest load_corpus(const std::string& json_path, const std::vector<ClassLabel>& labels) {
    std::ifstream in(json_path);
    if (!in) throw io_error("cannot open corpus " + json_path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("corpus " + json_path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw validation_error("corpus must be a JSON array: " + json_path);

    CorpusManifest manifest;
    manifest.labels = labels;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("case_id") || !item.contains("register") ||
            !item.contains("text") || !item.contains("truth"))
            throw validation_error("corpus entries need case_id/register/text/truth fields: " +
                                   json_path);
        if (!item["case_id"].is_number_integer())
            throw validation_error("corpus case_id must be an integer: " + json_path);
        Vignette v;
        v.case_id = item["case_id"].get<int>();
        try {
            v.reg = register_from_key(item["register"].get<std::string>());
            v.truth = label_by_name(labels, item["truth"].get<std::string>());
        } catch (const validation_error& e) {
            throw validation_error("case " + std::to_string(v.case_id) + ": " + e.what());
        }
        v.text = item["text"].get<std::string>();
        manifest.cases.push_back(std::move(v));
    }
    std::sort(manifest.cases.begin(), manifest.cases.end(), [](const Vignette& a, const Vignette& b) {
        if (a.case_id != b.case_id) return a.case_id < b.case_id;
        return register_rank(a.reg) < register_rank(b.reg);
    });
    manifest.check_invariants();
    return manifest;
}

std::string build_prompt(const Vignette& v, const std::vector<ClassLabel>& labels) {
    std::string out;
    out += "You are assisting with triage at a primary health care clinic.\n";
    out += "Read the case description and decide which single diagnostic label fits best.\n";
    out += "\n";
    out += "Case description:\n";
    out += v.text;
    out += "\n";
    out += "\n";
    out += "Answer with exactly one of the following labels and nothing else:\n";
    for (const auto& label : labels) {
        out += label.name;
        out += "\n";
    }
    return out;
}

void InferenceEndpoint::check_invariants() const {
    if (base_url.empty()) throw validation_error("endpoint base_url is empty");
    if (base_url.rfind("https://", 0) == 0)
        throw validation_error(
            "https endpoints are not supported by this build; use a plain http URL");
    if (base_url.rfind("http://", 0) != 0)
        throw validation_error("endpoint base_url must start with http://, got '" + base_url + "'");
    if (model_name.empty()) throw validation_error("endpoint model_name is empty");
    if (!(temperature >= 0.0 && temperature <= 2.0))
        throw validation_error("endpoint temperature must be in [0, 2]");
    if (!(timeout_seconds > 0.0)) throw validation_error("endpoint timeout must be positive");
    if (max_retries < 0) throw validation_error("endpoint max_retries must be non-negative");
}

InferenceEndpoint apply_env_overrides(InferenceEndpoint endpoint) {
    if (const char* url = std::getenv("AUDIT_ENDPOINT_URL"); url != nullptr && *url != '\0')
        endpoint.base_url = url;
    if (const char* model = std::getenv("AUDIT_MODEL_NAME"); model != nullptr && *model != '\0')
        endpoint.model_name = model;
    return endpoint;
}

QueryResult query(const InferenceEndpoint& endpoint, const std::string& prompt) {
    endpoint.check_invariants();

    std::string base = endpoint.base_url;
    while (!base.empty() && base.back() == '/') base.pop_back();
    // httplib wants scheme://host:port alone; a path prefix in base_url is
    // carried over to the request path instead.
    std::string host = base;
    std::string path_prefix;
    const auto scheme_end = base.find("://");
    if (scheme_end != std::string::npos) {
        const auto first_slash = base.find('/', scheme_end + 3);
        if (first_slash != std::string::npos) {
            host = base.substr(0, first_slash);
            path_prefix = base.substr(first_slash);
        }
    }

    nlohmann::json body;
    body["model"] = endpoint.model_name;
    body["prompt"] = prompt;
    body["stream"] = false;
    body["options"]["temperature"] = endpoint.temperature;
    const std::string payload = body.dump();

    const auto whole_seconds = static_cast<time_t>(endpoint.timeout_seconds);
    const auto micros = static_cast<time_t>(
        (endpoint.timeout_seconds - static_cast<double>(whole_seconds)) * 1e6);

    const int attempts_allowed = endpoint.max_retries + 1;
    std::string last_failure = "no attempt made";
    for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
        if (attempt > 1) {
            const auto backoff = std::chrono::milliseconds(100LL << (attempt - 2));
            std::this_thread::sleep_for(backoff);
        }
        httplib::Client client(host);
        client.set_connection_timeout(whole_seconds, micros);
        client.set_read_timeout(whole_seconds, micros);
        client.set_write_timeout(whole_seconds, micros);
        auto res = client.Post(path_prefix + "/api/generate", payload, "application/json");
        if (!res) {
            last_failure = std::string("transport failure: ") + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_failure = "HTTP " + std::to_string(res->status) + ": " + body_excerpt(res->body);
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw endpoint_error("endpoint " + endpoint.base_url + " returned HTTP " +
                                 std::to_string(res->status) + ": " + body_excerpt(res->body));
        nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("response") ||
            !doc["response"].is_string())
            throw endpoint_error("endpoint " + endpoint.base_url +
                                 " returned a completion without a string 'response' field: " +
                                 body_excerpt(res->body));
        return {doc["response"].get<std::string>(), attempt};
    }
    throw endpoint_error("endpoint " + endpoint.base_url + " failed after " +
                         std::to_string(attempts_allowed) + " attempts; last failure: " +
                         last_failure);
}

std::optional<ClassLabel> parse_label(const std::string& raw_response,
                                      const std::vector<ClassLabel>& labels) {
    const std::string hay = normalize_for_match(raw_response);

    // Canonical strings, longest normalized form first, so no label can be
    // claimed by another label that happens to be its substring.
    std::vector<const ClassLabel*> by_length;
    by_length.reserve(labels.size());
    for (const auto& label : labels) by_length.push_back(&label);
    std::stable_sort(by_length.begin(), by_length.end(), [](const ClassLabel* a, const ClassLabel* b) {
        return normalize_for_match(a->name).size() > normalize_for_match(b->name).size();
    });
    for (const ClassLabel* label : by_length)
        if (contains_phrase(hay, label->name)) return *label;

    // Fallback synonyms, checked in priority order. Each maps to a
    // canonical name and is skipped when the caller's label set lacks it.
    const bool mentions_covid = contains_phrase(hay, "covid") || contains_phrase(hay, "covid19") ||
                                contains_phrase(hay, "covid 19");
    struct Synonym {
        const char* phrase;
        const char* canonical;
    };
    static constexpr Synonym kSynonyms[] = {
        {"sars cov 2", "COVID-19"},
        {"coronavirus", "COVID-19"},
        {"covid19", "COVID-19"},
        {"covid", "COVID-19"},
        {"no findings", "Normal"},
        {"healthy", "Normal"},
        {"unremarkable", "Normal"},
    };
    for (const auto& syn : kSynonyms) {
        if (!contains_phrase(hay, syn.phrase)) continue;
        if (const ClassLabel* label = find_label_named(labels, syn.canonical)) return *label;
    }
    // Bare pneumonia with no covid qualifier anywhere in the response
    // reads as the non-covid kind.
    if (contains_phrase(hay, "pneumonia") && !mentions_covid)
        if (const ClassLabel* label = find_label_named(labels, "Non-COVID Pneumonia"))
            return *label;
    return std::nullopt;
}

HttpCompletionClient::HttpCompletionClient(InferenceEndpoint endpoint)
    : endpoint_(std::move(endpoint)) {
    endpoint_.check_invariants();
}

QueryResult HttpCompletionClient::complete(const Vignette&, const std::string& prompt) {
    return query(endpoint_, prompt);
}

const std::string& HttpCompletionClient::model_name() const { return endpoint_.model_name; }

FixtureClient::FixtureClient(std::string model_name,
                             std::map<std::pair<int, Register>, std::string> responses)
    : model_name_(std::move(model_name)), responses_(std::move(responses)) {
    if (model_name_.empty()) throw validation_error("fixture model name is empty");
}

FixtureClient FixtureClient::load(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw io_error("cannot open fixture " + json_path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("fixture " + json_path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("model") || !doc["model"].is_string() ||
        !doc.contains("responses") || !doc["responses"].is_object())
        throw validation_error("fixture needs a model name and a responses map: " + json_path);

    std::map<std::pair<int, Register>, std::string> responses;
    for (const auto& [case_key, per_register] : doc["responses"].items()) {
        int case_id = 0;
        try {
            case_id = std::stoi(case_key);
        } catch (const std::exception&) {
            throw validation_error("fixture case key is not an integer: '" + case_key + "'");
        }
        if (!per_register.is_object())
            throw validation_error("fixture case " + case_key +
                                   " must map register keys to responses");
        for (const auto& [reg_key, response] : per_register.items()) {
            if (!response.is_string())
                throw validation_error("fixture case " + case_key + " register '" + reg_key +
                                       "' must be a string");
            responses[{case_id, register_from_key(reg_key)}] = response.get<std::string>();
        }
    }
    return {doc["model"].get<std::string>(), std::move(responses)};
}

QueryResult FixtureClient::complete(const Vignette& v, const std::string&) {
    const auto it = responses_.find({v.case_id, v.reg});
    if (it == responses_.end())
        throw endpoint_error("fixture for model '" + model_name_ +
                             "' has no scripted response for " + describe_case(v.case_id, v.reg));
    return {it->second, 1};
}

const std::string& FixtureClient::model_name() const { return model_name_; }

const RegisterSummary& DriftProfile::summary(Register reg) const {
    for (const auto& s : registers)
        if (s.reg == reg) return s;
    throw validation_error("profile has no summary for register '" + register_key(reg) + "'");
}

const CaseOutcome& DriftProfile::outcome(int case_id, Register reg) const {
    for (const auto& o : outcomes)
        if (o.case_id == case_id && o.reg == reg) return o;
    throw validation_error("profile has no outcome for " + describe_case(case_id, reg));
}

DriftProfile run_drift_audit(CompletionClient& client, const CorpusManifest& corpus,
                             FailureMode mode, int parallelism) {
    corpus.check_invariants();
    if (parallelism < 1) throw validation_error("audit parallelism must be at least 1");

    const std::vector<int> ids = corpus.case_ids();
    const auto& regs = all_registers();
    const int per_case = static_cast<int>(regs.size());
    const int total = static_cast<int>(ids.size()) * per_case;

    struct Slot {
        const Vignette* vignette = nullptr;
        std::string raw;
        int attempts = 0;
        bool failed = false;
    };
    std::vector<Slot> slots(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i)
        slots[static_cast<std::size_t>(i)].vignette =
            &corpus.at(ids[static_cast<std::size_t>(i / per_case)], regs[static_cast<std::size_t>(i % per_case)]);

    parallel_for(total, parallelism, [&](std::int64_t i) {
        Slot& slot = slots[static_cast<std::size_t>(i)];
        const std::string prompt = build_prompt(*slot.vignette, corpus.labels);
        try {
            QueryResult result = client.complete(*slot.vignette, prompt);
            slot.raw = std::move(result.raw_response);
            slot.attempts = result.attempt_count;
        } catch (const endpoint_error& e) {
            if (mode == FailureMode::strict) throw;
            slot.raw = e.what();
            slot.failed = true;
        }
    });

    DriftProfile profile;
    profile.model_name = client.model_name();
    profile.case_count = static_cast<int>(ids.size());
    profile.case_ids = ids;
    profile.outcomes.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        const Slot& slot = slots[static_cast<std::size_t>(i)];
        CaseOutcome out;
        out.case_id = slot.vignette->case_id;
        out.reg = slot.vignette->reg;
        out.raw_response = slot.raw;
        out.attempt_count = slot.attempts;
        if (!slot.failed) out.parsed = parse_label(slot.raw, corpus.labels);
        out.correct = out.parsed.has_value() && *out.parsed == slot.vignette->truth;
        if (out.reg != Register::standard_english) {
            // The English slot of the same case precedes this one.
            const CaseOutcome& english = profile.outcomes[static_cast<std::size_t>((i / per_case) * per_case)];
            out.consistent_with_english = out.parsed.has_value() && english.parsed.has_value() &&
                                          *out.parsed == *english.parsed;
        }
        profile.outcomes.push_back(std::move(out));
    }

    for (const Register reg : regs) {
        RegisterSummary summary;
        summary.reg = reg;
        for (const auto& out : profile.outcomes) {
            if (out.reg != reg) continue;
            if (out.correct) ++summary.correct_count;
            if (out.consistent_with_english.value_or(false)) ++summary.consistent_count;
        }
        summary.accuracy = static_cast<double>(summary.correct_count) / profile.case_count;
        if (reg == Register::standard_english) {
            // Consistency with English is definitional here, not tallied;
            // an unparseable English answer must not make a model look
            // self-inconsistent.
            summary.consistent_count = profile.case_count;
            summary.consistency = 1.0;
        } else {
            summary.consistency = static_cast<double>(summary.consistent_count) / profile.case_count;
        }
        profile.registers.push_back(summary);
    }

    for (std::size_t ci = 0; ci < ids.size(); ++ci) {
        std::set<int> distinct;
        for (int ri = 0; ri < per_case; ++ri) {
            const CaseOutcome& out = profile.outcomes[ci * static_cast<std::size_t>(per_case) +
                                                      static_cast<std::size_t>(ri)];
            distinct.insert(out.parsed.has_value() ? out.parsed->index : -1);
        }
        if (distinct.size() > 1) profile.flip_cases.push_back(ids[ci]);
    }
    return profile;
}

DriftProfile run_drift_audit(const InferenceEndpoint& endpoint, const CorpusManifest& corpus,
                             FailureMode mode, int parallelism) {
    endpoint.check_invariants();
    if (endpoint.temperature != 0.0)
        throw validation_error("audit runs require temperature 0, got " +
                               std::to_string(endpoint.temperature));
    HttpCompletionClient client(endpoint);
    return run_drift_audit(client, corpus, mode, parallelism);
}

const ModelComparison::Row& ModelComparison::row(Register reg) const {
    for (const auto& r : rows)
        if (r.reg == reg) return r;
    throw validation_error("comparison has no row for register '" + register_key(reg) + "'");
}

ModelComparison compare_models(const std::vector<DriftProfile>& profiles) {
    if (profiles.size() < 2)
        throw validation_error("model comparison needs at least two profiles, got " +
                               std::to_string(profiles.size()));
    for (std::size_t i = 1; i < profiles.size(); ++i)
        if (profiles[i].case_ids != profiles.front().case_ids)
            throw validation_error("profiles cover different corpora: '" +
                                   profiles.front().model_name + "' vs '" +
                                   profiles[i].model_name + "'");

    ModelComparison cmp;
    for (const auto& p : profiles) cmp.model_names.push_back(p.model_name);
    for (const Register reg : all_registers()) {
        ModelComparison::Row row;
        row.reg = reg;
        for (const auto& p : profiles) {
            const double accuracy = p.summary(reg).accuracy;
            row.accuracy.push_back(accuracy);
            row.consistency.push_back(p.summary(reg).consistency);
            row.drop_pp.push_back((accuracy - p.summary(Register::standard_english).accuracy) *
                                  100.0);
        }
        cmp.rows.push_back(std::move(row));
    }
    return cmp;
}

}  // namespace audit
