#include "auditkit/runner.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <utility>

#include "auditkit/errors.hpp"

namespace audit {

void RunConfig::check_invariants() const {
    if (out_root.empty()) throw validation_error("output root must not be empty");
    if (per_class_train < 1)
        throw validation_error("per-class training count must be >= 1, got " +
                               std::to_string(per_class_train));
    if (per_class_test < 1)
        throw validation_error("per-class test count must be >= 1, got " +
                               std::to_string(per_class_test));
    model.check_invariants();
    TrainConfig effective = train;
    effective.seed = seed;
    effective.check_invariants();
    if (!(defend_epsilon >= 0.0 && defend_epsilon <= 1.0))
        throw validation_error("defence epsilon must lie in [0, 1], got " +
                               std::to_string(defend_epsilon));
    if (corpus_path.empty()) throw validation_error("corpus path must not be empty");
    if (endpoint_url.empty()) throw validation_error("endpoint URL must not be empty");
    if (!lang_models.empty() && !lang_fixtures.empty())
        throw validation_error("configure fixture transcripts or live endpoints, not both");
    if (lang_temperature < 0.0)
        throw validation_error("temperature must be >= 0, got " +
                               std::to_string(lang_temperature));
    if (!(lang_timeout_seconds > 0.0))
        throw validation_error("timeout must be positive, got " +
                               std::to_string(lang_timeout_seconds));
    if (lang_max_retries < 0)
        throw validation_error("max retries must be >= 0, got " +
                               std::to_string(lang_max_retries));
    if (lang_parallelism < 1)
        throw validation_error("parallelism must be >= 1, got " +
                               std::to_string(lang_parallelism));
}

const char* rate_format_key(RateFormat rates) {
    return rates == RateFormat::percent ? "percent" : "fraction";
}

RateFormat parse_rate_format(const std::string& key) {
    if (key == "fraction") return RateFormat::fraction;
    if (key == "percent") return RateFormat::percent;
    throw validation_error("unknown rate format '" + key + "', expected fraction or percent");
}

const char* failure_mode_key(FailureMode mode) {
    return mode == FailureMode::lenient ? "lenient" : "strict";
}

FailureMode parse_failure_mode(const std::string& key) {
    if (key == "strict") return FailureMode::strict;
    if (key == "lenient") return FailureMode::lenient;
    throw validation_error("unknown failure mode '" + key + "', expected strict or lenient");
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["schema_version"] = kBundleSchemaVersion;
    j["seed"] = cfg.seed;
    j["out_root"] = cfg.out_root;
    j["data"] = {{"per_class_train", cfg.per_class_train},
                 {"per_class_test", cfg.per_class_test}};
    j["model"] = {{"in_channels", cfg.model.in_channels},
                  {"image_size", cfg.model.image_size},
                  {"num_classes", cfg.model.num_classes},
                  {"stem_channels", cfg.model.stem_channels},
                  {"blocks", cfg.model.blocks},
                  {"layers_per_block", cfg.model.layers_per_block},
                  {"growth", cfg.model.growth}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"learning_rate", static_cast<double>(cfg.train.learning_rate)},
                  {"beta1", static_cast<double>(cfg.train.beta1)},
                  {"beta2", static_cast<double>(cfg.train.beta2)},
                  {"adam_epsilon", static_cast<double>(cfg.train.adam_epsilon)},
                  {"schedule_step", cfg.train.schedule_step},
                  {"schedule_gamma", static_cast<double>(cfg.train.schedule_gamma)},
                  {"batch_size", cfg.train.batch_size}};
    j["attack"] = {{"ci_method", ci_method_name(cfg.ci_method)},
                   {"checkpoint", cfg.checkpoint_override}};
    j["defend"] = {{"epsilon", cfg.defend_epsilon}};
    j["lang"] = {{"corpus", cfg.corpus_path},
                 {"endpoint_url", cfg.endpoint_url},
                 {"models", cfg.lang_models},
                 {"fixtures", cfg.lang_fixtures},
                 {"temperature", cfg.lang_temperature},
                 {"timeout_seconds", cfg.lang_timeout_seconds},
                 {"max_retries", cfg.lang_max_retries},
                 {"failure_mode", failure_mode_key(cfg.failure_mode)},
                 {"parallelism", cfg.lang_parallelism}};
    j["report"] = {{"rates", rate_format_key(cfg.csv_rates)}, {"timestamp", cfg.timestamp}};
    return j;
}

namespace {

std::string dotted(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

const nlohmann::json* maybe(const nlohmann::json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

void reject_unknown(const nlohmann::json& obj, const std::string& prefix,
                    std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw validation_error("unknown config key '" + dotted(prefix, it.key()) + "'");
    }
}

// Sections are optional; a present one must be an object.
const nlohmann::json* config_section(const nlohmann::json& doc, const char* key) {
    const nlohmann::json* sec = maybe(doc, key);
    if (sec && !sec->is_object())
        throw validation_error("config key '" + std::string(key) + "' must be an object");
    return sec;
}

// Field readers: absent keys keep the caller's default, present ones must
// carry the right type.
void read_int(const nlohmann::json& obj, const std::string& prefix, const char* key, int& out) {
    if (const nlohmann::json* v = maybe(obj, key)) {
        if (!v->is_number_integer())
            throw validation_error("config key '" + dotted(prefix, key) + "' must be an integer");
        out = v->get<int>();
    }
}

void read_u64(const nlohmann::json& obj, const std::string& prefix, const char* key,
              std::uint64_t& out) {
    if (const nlohmann::json* v = maybe(obj, key)) {
        if (!v->is_number_unsigned())
            throw validation_error("config key '" + dotted(prefix, key) +
                                   "' must be a non-negative integer");
        out = v->get<std::uint64_t>();
    }
}

void read_double(const nlohmann::json& obj, const std::string& prefix, const char* key,
                 double& out) {
    if (const nlohmann::json* v = maybe(obj, key)) {
        if (!v->is_number())
            throw validation_error("config key '" + dotted(prefix, key) + "' must be a number");
        out = v->get<double>();
    }
}

void read_float(const nlohmann::json& obj, const std::string& prefix, const char* key,
                float& out) {
    double wide = static_cast<double>(out);
    read_double(obj, prefix, key, wide);
    out = static_cast<float>(wide);
}

void read_string(const nlohmann::json& obj, const std::string& prefix, const char* key,
                 std::string& out) {
    if (const nlohmann::json* v = maybe(obj, key)) {
        if (!v->is_string())
            throw validation_error("config key '" + dotted(prefix, key) + "' must be a string");
        out = v->get<std::string>();
    }
}

void read_strings(const nlohmann::json& obj, const std::string& prefix, const char* key,
                  std::vector<std::string>& out) {
    if (const nlohmann::json* v = maybe(obj, key)) {
        if (!v->is_array())
            throw validation_error("config key '" + dotted(prefix, key) +
                                   "' must be an array of strings");
        std::vector<std::string> parsed;
        for (const nlohmann::json& e : *v) {
            if (!e.is_string())
                throw validation_error("config key '" + dotted(prefix, key) +
                                       "' must be an array of strings");
            parsed.push_back(e.get<std::string>());
        }
        out = std::move(parsed);
    }
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string join_ints(const std::vector<int>& vals) {
    std::string out;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(vals[i]);
    }
    return out;
}

std::string pct1(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", rate * 100.0);
    return buf;
}

std::string eps3(double epsilon) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", epsilon);
    return buf;
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Validates, claims the run directory and logs the resolved config there,
// so every stage leaves a record of exactly what it ran.
RunPaths prepare_run(const RunConfig& cfg) {
    cfg.check_invariants();
    RunPaths paths = run_paths(cfg);
    std::error_code ec;
    std::filesystem::create_directories(paths.run_dir, ec);
    if (ec)
        throw io_error("cannot create run directory '" + paths.run_dir + "': " + ec.message());
    nlohmann::json j = run_config_to_json(cfg);
    j["config_hash"] = run_config_hash(cfg);
    write_json_artifact(paths.config_json(), j);
    return paths;
}

std::string checkpoint_path(const RunConfig& cfg, const RunPaths& paths) {
    return cfg.checkpoint_override.empty() ? paths.checkpoint() : cfg.checkpoint_override;
}

MicroDenseNet load_checkpoint(const RunConfig& cfg, const RunPaths& paths) {
    std::string path = checkpoint_path(cfg, paths);
    if (!std::filesystem::exists(path))
        throw validation_error("no checkpoint at '" + path +
                               "'; run the train stage with this configuration first");
    return load_model(path);
}

std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> benchmark_for(
    const RunConfig& cfg) {
    SplitConfig split;
    split.per_class_train = cfg.per_class_train;
    split.per_class_test = cfg.per_class_test;
    split.seed = cfg.seed;
    return generate_synthetic_benchmark(split, cfg.model.image_size);
}

NormalizationStats stats_for(const RunConfig& cfg) {
    return cfg.model.in_channels == 3 ? NormalizationStats::imagenet()
                                      : NormalizationStats::grayscale();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw validation_error("config document must be a JSON object");
    RunConfig cfg;
    // schema_version and config_hash are stamped into logged configs;
    // accepting them here lets a run's own config.json drive a rerun.
    reject_unknown(doc, "", {"schema_version", "config_hash", "seed", "out_root", "data",
                             "model", "train", "attack", "defend", "lang", "report"});
    read_u64(doc, "", "seed", cfg.seed);
    read_string(doc, "", "out_root", cfg.out_root);
    if (const nlohmann::json* sec = config_section(doc, "data")) {
        reject_unknown(*sec, "data", {"per_class_train", "per_class_test"});
        read_int(*sec, "data", "per_class_train", cfg.per_class_train);
        read_int(*sec, "data", "per_class_test", cfg.per_class_test);
    }
    if (const nlohmann::json* sec = config_section(doc, "model")) {
        reject_unknown(*sec, "model",
                       {"in_channels", "image_size", "num_classes", "stem_channels", "blocks",
                        "layers_per_block", "growth"});
        read_int(*sec, "model", "in_channels", cfg.model.in_channels);
        read_int(*sec, "model", "image_size", cfg.model.image_size);
        read_int(*sec, "model", "num_classes", cfg.model.num_classes);
        read_int(*sec, "model", "stem_channels", cfg.model.stem_channels);
        read_int(*sec, "model", "blocks", cfg.model.blocks);
        read_int(*sec, "model", "layers_per_block", cfg.model.layers_per_block);
        read_int(*sec, "model", "growth", cfg.model.growth);
    }
    if (const nlohmann::json* sec = config_section(doc, "train")) {
        reject_unknown(*sec, "train",
                       {"epochs", "learning_rate", "beta1", "beta2", "adam_epsilon",
                        "schedule_step", "schedule_gamma", "batch_size"});
        read_int(*sec, "train", "epochs", cfg.train.epochs);
        read_float(*sec, "train", "learning_rate", cfg.train.learning_rate);
        read_float(*sec, "train", "beta1", cfg.train.beta1);
        read_float(*sec, "train", "beta2", cfg.train.beta2);
        read_float(*sec, "train", "adam_epsilon", cfg.train.adam_epsilon);
        read_int(*sec, "train", "schedule_step", cfg.train.schedule_step);
        read_float(*sec, "train", "schedule_gamma", cfg.train.schedule_gamma);
        read_int(*sec, "train", "batch_size", cfg.train.batch_size);
    }
    if (const nlohmann::json* sec = config_section(doc, "attack")) {
        reject_unknown(*sec, "attack", {"ci_method", "checkpoint"});
        std::string method = ci_method_name(cfg.ci_method);
        read_string(*sec, "attack", "ci_method", method);
        cfg.ci_method = parse_ci_method(method);
        read_string(*sec, "attack", "checkpoint", cfg.checkpoint_override);
    }
    if (const nlohmann::json* sec = config_section(doc, "defend")) {
        reject_unknown(*sec, "defend", {"epsilon"});
        read_double(*sec, "defend", "epsilon", cfg.defend_epsilon);
    }
    if (const nlohmann::json* sec = config_section(doc, "lang")) {
        reject_unknown(*sec, "lang",
                       {"corpus", "endpoint_url", "models", "fixtures", "temperature",
                        "timeout_seconds", "max_retries", "failure_mode", "parallelism"});
        read_string(*sec, "lang", "corpus", cfg.corpus_path);
        read_string(*sec, "lang", "endpoint_url", cfg.endpoint_url);
        read_strings(*sec, "lang", "models", cfg.lang_models);
        read_strings(*sec, "lang", "fixtures", cfg.lang_fixtures);
        read_double(*sec, "lang", "temperature", cfg.lang_temperature);
        read_double(*sec, "lang", "timeout_seconds", cfg.lang_timeout_seconds);
        read_int(*sec, "lang", "max_retries", cfg.lang_max_retries);
        std::string mode = failure_mode_key(cfg.failure_mode);
        read_string(*sec, "lang", "failure_mode", mode);
        cfg.failure_mode = parse_failure_mode(mode);
        read_int(*sec, "lang", "parallelism", cfg.lang_parallelism);
    }
    if (const nlohmann::json* sec = config_section(doc, "report")) {
        reject_unknown(*sec, "report", {"rates", "timestamp"});
        std::string rates = rate_format_key(cfg.csv_rates);
        read_string(*sec, "report", "rates", rates);
        cfg.csv_rates = parse_rate_format(rates);
        read_string(*sec, "report", "timestamp", cfg.timestamp);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_json_artifact(path));
}

std::string run_config_hash(const RunConfig& cfg) {
    nlohmann::json j = run_config_to_json(cfg);
    j.erase("schema_version");
    j.erase("out_root");
    j["report"].erase("timestamp");
    return hex64(fnv1a64(j.dump()));
}

std::string RunPaths::config_json() const { return run_dir + "/config.json"; }
std::string RunPaths::checkpoint() const { return run_dir + "/checkpoint.json"; }
std::string RunPaths::trace_csv() const { return run_dir + "/training_trace.csv"; }
std::string RunPaths::sweep_json() const { return run_dir + "/sweep.json"; }
std::string RunPaths::decay_csv() const { return run_dir + "/robustness_decay.csv"; }
std::string RunPaths::mitigation_json() const { return run_dir + "/mitigation.json"; }
std::string RunPaths::drift_json() const { return run_dir + "/drift_profile.json"; }
std::string RunPaths::figures_dir() const { return run_dir + "/figures"; }
std::string RunPaths::bundle_dir() const { return run_dir + "/bundle"; }

RunPaths run_paths(const RunConfig& cfg) {
    return RunPaths{cfg.out_root + "/" + run_config_hash(cfg)};
}

void run_train(const RunConfig& cfg, std::ostream& out) {
    RunPaths paths = prepare_run(cfg);
    auto [train_set, test_set] = benchmark_for(cfg);
    MicroDenseNet model = make_model<float>(cfg.model, stats_for(cfg), cfg.seed);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    TrainingTrace trace = train(model, train_set, tc);
    save_model(paths.checkpoint(), model);
    write_trace_csv(paths.trace_csv(), trace);
    Evaluation eval = evaluate(model, test_set);
    ModelFingerprint fp = fingerprint_model(model, cfg.seed);
    const EpochStats& last = trace.epochs.back();
    out << "train: " << train_set.size() << " train / " << test_set.size()
        << " test images, seed " << cfg.seed << "\n";
    out << "train: epoch " << last.epoch << " loss " << last.loss << ", train accuracy "
        << pct1(last.train_accuracy) << "\n";
    out << "train: test accuracy " << pct1(eval.overall_accuracy) << "\n";
    out << "train: checkpoint " << fp.checkpoint_hash << " -> " << paths.checkpoint() << "\n";
    out << "train: trace -> " << paths.trace_csv() << "\n";
}

void run_attack(const RunConfig& cfg, std::ostream& out) {
    RunPaths paths = prepare_run(cfg);
    MicroDenseNet model = load_checkpoint(cfg, paths);
    auto [train_set, test_set] = benchmark_for(cfg);
    (void)train_set;
    SweepResult sweep = robustness_sweep(model, test_set, epsilon_grid(), cfg.ci_method);
    write_json_artifact(paths.sweep_json(), sweep_to_json(sweep));
    emit_decay_csv(sweep, paths.decay_csv(), cfg.csv_rates);
    std::error_code ec;
    std::filesystem::create_directories(paths.figures_dir(), ec);
    if (ec)
        throw io_error("cannot create '" + paths.figures_dir() + "': " + ec.message());
    std::string figure = paths.figures_dir() + "/robustness_decay.svg";
    emit_decay_figure(sweep, figure);
    out << format_sweep_table(sweep);
    if (std::optional<double> dz = danger_zone_threshold(sweep))
        out << "attack: accuracy first drops below 50% at epsilon " << eps3(*dz) << "\n";
    else
        out << "attack: accuracy never drops below 50% on this grid\n";
    out << "attack: sweep -> " << paths.sweep_json() << "\n";
    out << "attack: decay curve -> " << paths.decay_csv() << ", " << figure << "\n";
}

void run_defend(const RunConfig& cfg, std::ostream& out) {
    RunPaths paths = prepare_run(cfg);
    MicroDenseNet model = load_checkpoint(cfg, paths);
    auto [train_set, test_set] = benchmark_for(cfg);
    MitigationReport report = mitigation_stress_test(model, train_set, test_set,
                                                     cfg.defend_epsilon);
    write_json_artifact(paths.mitigation_json(), mitigation_to_json(report));
    out << format_mitigation_table(report);
    out << "defend: mitigation -> " << paths.mitigation_json() << "\n";
}

void run_lang_audit(const RunConfig& cfg, std::ostream& out) {
    RunPaths paths = prepare_run(cfg);
    CorpusManifest corpus = load_corpus(cfg.corpus_path);
    std::vector<DriftProfile> profiles;
    std::string url;
    if (!cfg.lang_fixtures.empty()) {
        std::vector<std::string> names;
        for (const std::string& path : cfg.lang_fixtures) {
            FixtureClient client = FixtureClient::load(path);
            out << "lang-audit: replaying " << client.model_name() << " from " << path << "\n";
            profiles.push_back(
                run_drift_audit(client, corpus, cfg.failure_mode, cfg.lang_parallelism));
            names.push_back(std::filesystem::path(path).filename().string());
        }
        url = "fixture://" + join(names, ",");
    } else {
        std::vector<std::string> models = cfg.lang_models;
        if (models.empty()) models.push_back(InferenceEndpoint{}.model_name);
        for (const std::string& name : models) {
            InferenceEndpoint endpoint;
            endpoint.base_url = cfg.endpoint_url;
            endpoint.model_name = name;
            endpoint.temperature = cfg.lang_temperature;
            endpoint.timeout_seconds = cfg.lang_timeout_seconds;
            endpoint.max_retries = cfg.lang_max_retries;
            endpoint = apply_env_overrides(endpoint);
            out << "lang-audit: querying " << endpoint.model_name << " at " << endpoint.base_url
                << "\n";
            profiles.push_back(
                run_drift_audit(endpoint, corpus, cfg.failure_mode, cfg.lang_parallelism));
            url = endpoint.base_url;
        }
    }
    DriftProfileDocument doc =
        build_drift_document(url, cfg.lang_temperature, corpus, std::move(profiles));
    // Intermediate artifact; the bundle stamps the real timestamp later.
    write_json_artifact(paths.drift_json(), drift_document_to_json(doc, ""));
    emit_drift_figures(doc.profiles, paths.figures_dir());
    out << format_drift_table(doc.profiles);
    for (const DriftProfile& p : doc.profiles) {
        out << "lang-audit: " << p.model_name << " flips diagnosis on " << p.flip_cases.size()
            << " of " << p.case_count << " cases";
        if (!p.flip_cases.empty()) out << " (case " << join_ints(p.flip_cases) << ")";
        out << "\n";
    }
    out << "lang-audit: profile -> " << paths.drift_json() << "\n";
}

std::vector<std::string> run_report(const RunConfig& cfg, std::ostream& out) {
    RunPaths paths = prepare_run(cfg);
    std::string ckpt = checkpoint_path(cfg, paths);
    bool have_checkpoint = std::filesystem::exists(ckpt);
    bool have_sweep = std::filesystem::exists(paths.sweep_json());
    bool have_mitigation = std::filesystem::exists(paths.mitigation_json());
    bool have_drift = std::filesystem::exists(paths.drift_json());

    int robustness_inputs = int(have_checkpoint) + int(have_sweep) + int(have_mitigation);
    bool map_side = robustness_inputs == 3;
    if (!map_side && robustness_inputs > 0) {
        std::vector<std::string> missing;
        if (!have_checkpoint) missing.push_back("a checkpoint (train)");
        if (!have_sweep) missing.push_back("sweep.json (attack)");
        if (!have_mitigation) missing.push_back("mitigation.json (defend)");
        throw validation_error("robustness inputs are incomplete: missing " +
                               join(missing, ", ") +
                               "; run the named stages for this configuration first");
    }
    if (!map_side && !have_drift)
        throw validation_error("nothing to assemble in '" + paths.run_dir +
                               "': run train, attack and defend, or lang-audit, first");

    std::optional<RobustnessMap> map;
    std::vector<AdversarialExample> examples;
    if (map_side) {
        MicroDenseNet model = load_model(ckpt);
        SweepResult sweep = sweep_from_json(read_json_artifact(paths.sweep_json()));
        MitigationReport mitigation =
            mitigation_from_json(read_json_artifact(paths.mitigation_json()));
        std::vector<std::string> class_names;
        for (const ClassLabel& label : model.labels) class_names.push_back(label.name);
        map = build_robustness_map(fingerprint_model(model, cfg.seed), std::move(class_names),
                                   std::move(sweep), std::move(mitigation));
        // The triptych shows one exemplar per class: the first test image
        // of each, attacked at the defence stress point.
        auto [train_set, test_set] = benchmark_for(cfg);
        (void)train_set;
        std::vector<LabeledImage> picks;
        for (const ClassLabel& label : model.labels)
            for (const LabeledImage& img : test_set)
                if (img.label.index == label.index) {
                    picks.push_back(img);
                    break;
                }
        AttackConfig atk;
        atk.epsilon = static_cast<float>(cfg.defend_epsilon);
        std::vector<LabeledImage> advs = fgm_batch(model, picks, atk);
        Prediction clean_pred = predict(model, picks);
        Prediction adv_pred = predict(model, advs);
        for (std::size_t i = 0; i < picks.size(); ++i)
            examples.push_back(AdversarialExample{picks[i], advs[i],
                                                  clean_pred.labels[i].index,
                                                  adv_pred.labels[i].index});
    }
    std::optional<DriftProfileDocument> drift;
    if (have_drift) drift = drift_document_from_json(read_json_artifact(paths.drift_json()));

    std::string generated_at = cfg.timestamp.empty() ? utc_timestamp() : cfg.timestamp;
    BundleOptions opts{generated_at, cfg.csv_rates};
    std::vector<std::string> written = emit_audit_bundle(
        map ? &*map : nullptr, drift ? &*drift : nullptr, paths.bundle_dir(), opts);
    std::string fig_dir = paths.bundle_dir() + "/figures";
    if (map) {
        std::vector<std::string> figs = emit_robustness_figures(*map, examples, fig_dir);
        written.insert(written.end(), figs.begin(), figs.end());
    }
    if (drift) {
        std::vector<std::string> figs = emit_drift_figures(drift->profiles, fig_dir);
        written.insert(written.end(), figs.begin(), figs.end());
    }
    nlohmann::json cj = run_config_to_json(cfg);
    cj["config_hash"] = run_config_hash(cfg);
    std::string config_copy = paths.bundle_dir() + "/config.json";
    write_json_artifact(config_copy, cj);
    written.push_back(config_copy);
    out << format_summary(map ? &*map : nullptr, drift ? &*drift : nullptr, generated_at);
    for (const std::string& path : written) out << "report: wrote " << path << "\n";
    return written;
}

void run_audit_all(const RunConfig& cfg, std::ostream& out) {
    run_train(cfg, out);
    run_attack(cfg, out);
    run_defend(cfg, out);
    if (!cfg.lang_fixtures.empty() || !cfg.lang_models.empty())
        run_lang_audit(cfg, out);
    else
        out << "lang-audit: skipped (no fixtures or models configured)\n";
    run_report(cfg, out);
}

}  // namespace audit
