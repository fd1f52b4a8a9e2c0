#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "auditkit/report.hpp"

#include <json.hpp>

namespace audit {

// One struct for everything a run can configure: the data split, the
// model shape, the training schedule, the attack's interval method, the
// defence stress point, the language endpoints and the report options.
// The global seed drives data generation, weight initialization and
// shuffling alike; the seed field inside `train` is overridden by it.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_root = "runs";

    int per_class_train = 200;
    int per_class_test = 50;
    MicroDenseNetConfig model;
    TrainConfig train;

    CIMethod ci_method = CIMethod::wilson;
    // When set, attack, defend and report read this checkpoint file
    // instead of the run's own.
    std::string checkpoint_override;

    // Stress-test attack strength; the default is the first nonzero
    // level of the decay grid.
    double defend_epsilon = 0.3 / 14.0;

    std::string corpus_path = "data/sample_corpus.json";
    std::string endpoint_url = "http://127.0.0.1:11434";
    // Live model names to audit, one endpoint per entry. Empty means the
    // stock local model when lang-audit is invoked directly, and skips
    // the language stage in audit-all.
    std::vector<std::string> lang_models;
    // Recorded transcript files; when set the audit runs offline and
    // lang_models must stay empty.
    std::vector<std::string> lang_fixtures;
    double lang_temperature = 0.0;
    double lang_timeout_seconds = 30.0;
    int lang_max_retries = 3;
    FailureMode failure_mode = FailureMode::strict;
    int lang_parallelism = 1;

    RateFormat csv_rates = RateFormat::fraction;
    // Stamped into the bundle verbatim; empty means the wall clock at
    // report time. Pin it to make two runs byte-identical.
    std::string timestamp;

    void check_invariants() const;
};

const char* rate_format_key(RateFormat rates);
RateFormat parse_rate_format(const std::string& key);
const char* failure_mode_key(FailureMode mode);
FailureMode parse_failure_mode(const std::string& key);

// Full config, every field resolved, grouped into the same sections a
// config file uses.
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Merges the document over the defaults: absent keys keep their default,
// unknown keys are rejected by their dotted path. schema_version and
// config_hash are accepted and ignored, so a logged config.json loads
// back as-is.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

// Hash over the experiment-defining fields. Where outputs land
// (out_root) and how the bundle is stamped (timestamp) do not change
// what was run, so they are excluded.
std::string run_config_hash(const RunConfig& cfg);

struct RunPaths {
    std::string run_dir;

    std::string config_json() const;
    std::string checkpoint() const;
    std::string trace_csv() const;
    std::string sweep_json() const;
    std::string decay_csv() const;
    std::string mitigation_json() const;
    std::string drift_json() const;
    std::string figures_dir() const;
    std::string bundle_dir() const;
};

// out_root/<config hash>. Identical configurations map to the same
// directory, so a rerun overwrites its own artifacts and never someone
// else's.
RunPaths run_paths(const RunConfig& cfg);

// Stage drivers. Each validates the config, creates the run directory,
// logs the fully-resolved config there, writes its artifacts and prints
// a short account to `out`. Identical inputs produce identical
// artifacts.
void run_train(const RunConfig& cfg, std::ostream& out);
void run_attack(const RunConfig& cfg, std::ostream& out);
void run_defend(const RunConfig& cfg, std::ostream& out);
void run_lang_audit(const RunConfig& cfg, std::ostream& out);
// Assembles the bundle from whatever stage artifacts the run directory
// holds; returns the paths written.
std::vector<std::string> run_report(const RunConfig& cfg, std::ostream& out);
// train, attack, defend, lang-audit (when configured), report.
void run_audit_all(const RunConfig& cfg, std::ostream& out);

}  // namespace audit
