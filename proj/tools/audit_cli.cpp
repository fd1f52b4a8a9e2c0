#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "auditkit/errors.hpp"
#include "auditkit/runner.hpp"

#include <CLI11.hpp>

namespace {

// Bindable storage for every flag a subcommand can carry, initialized
// from the config defaults so --help prints the values a bare run uses.
// Each registered option is remembered by key; resolve() applies only the
// ones the user actually passed, so flags override a --config file
// without clobbering its other fields.
struct StageFlags {
    std::string config_path;
    std::uint64_t seed;
    std::string out_root;
    bool synthetic = false;
    int epochs;
    double learning_rate;
    int batch_size;
    int per_class_train;
    int per_class_test;
    std::string ci;
    std::string rates;
    std::string checkpoint;
    double epsilon;
    std::string corpus;
    std::string endpoint_url;
    std::vector<std::string> models;
    std::vector<std::string> fixtures;
    bool lenient = false;
    int parallelism;
    double timeout;
    int max_retries;
    std::string timestamp;
    std::map<std::string, CLI::Option*> opts;

    StageFlags() {
        audit::RunConfig d;
        seed = d.seed;
        out_root = d.out_root;
        epochs = d.train.epochs;
        learning_rate = static_cast<double>(d.train.learning_rate);
        batch_size = d.train.batch_size;
        per_class_train = d.per_class_train;
        per_class_test = d.per_class_test;
        ci = audit::ci_method_name(d.ci_method);
        rates = audit::rate_format_key(d.csv_rates);
        checkpoint = d.checkpoint_override;
        epsilon = d.defend_epsilon;
        corpus = d.corpus_path;
        endpoint_url = d.endpoint_url;
        parallelism = d.lang_parallelism;
        timeout = d.lang_timeout_seconds;
        max_retries = d.lang_max_retries;
        timestamp = d.timestamp;
    }
};

void track(StageFlags& f, const std::string& key, CLI::Option* opt) { f.opts[key] = opt; }

void add_common(CLI::App* sub, StageFlags& f) {
    track(f, "config",
          sub->add_option("--config", f.config_path,
                          "configuration file (JSON); explicit flags override its values")
              ->check(CLI::ExistingFile));
    track(f, "seed",
          sub->add_option("--seed", f.seed, "global seed for data, weights and shuffling")
              ->capture_default_str());
    track(f, "out",
          sub->add_option("--out", f.out_root, "root directory for run outputs")
              ->capture_default_str());
}

void add_train_opts(CLI::App* sub, StageFlags& f) {
    track(f, "synthetic",
          sub->add_flag("--synthetic", f.synthetic,
                        "train on the procedural benchmark (the default and only source)"));
    track(f, "epochs",
          sub->add_option("--epochs", f.epochs, "training epochs")->capture_default_str());
    track(f, "learning-rate",
          sub->add_option("--learning-rate", f.learning_rate, "initial Adam step size")
              ->capture_default_str());
    track(f, "batch-size",
          sub->add_option("--batch-size", f.batch_size, "minibatch size")->capture_default_str());
    track(f, "per-class-train",
          sub->add_option("--per-class-train", f.per_class_train, "training images per class")
              ->capture_default_str());
    track(f, "per-class-test",
          sub->add_option("--per-class-test", f.per_class_test, "test images per class")
              ->capture_default_str());
}

void add_ci_opt(CLI::App* sub, StageFlags& f) {
    track(f, "ci",
          sub->add_option("--ci", f.ci, "confidence interval method")
              ->check(CLI::IsMember({"wilson", "wald"}))
              ->capture_default_str());
}

void add_rates_opt(CLI::App* sub, StageFlags& f) {
    track(f, "rates",
          sub->add_option("--rates", f.rates, "rate column format in CSV output")
              ->check(CLI::IsMember({"fraction", "percent"}))
              ->capture_default_str());
}

void add_checkpoint_opt(CLI::App* sub, StageFlags& f) {
    track(f, "checkpoint",
          sub->add_option("--checkpoint", f.checkpoint,
                          "read this checkpoint instead of the run's own"));
}

void add_epsilon_opt(CLI::App* sub, StageFlags& f) {
    track(f, "epsilon",
          sub->add_option("--epsilon", f.epsilon, "attack strength for the mitigation stress test")
              ->capture_default_str());
}

void add_lang_opts(CLI::App* sub, StageFlags& f) {
    track(f, "corpus",
          sub->add_option("--corpus", f.corpus, "clinical vignette corpus (JSON)")
              ->capture_default_str());
    track(f, "endpoint-url",
          sub->add_option("--endpoint-url", f.endpoint_url, "completion endpoint base URL")
              ->capture_default_str());
    track(f, "model",
          sub->add_option("--model", f.models, "model name to audit; repeat for several"));
    track(f, "fixture",
          sub->add_option("--fixture", f.fixtures,
                          "recorded transcript file; repeat for several (runs offline)")
              ->check(CLI::ExistingFile));
    track(f, "lenient",
          sub->add_flag("--lenient", f.lenient,
                        "score endpoint failures as unparseable instead of aborting"));
    track(f, "parallelism",
          sub->add_option("--parallelism", f.parallelism, "concurrent completions per audit")
              ->capture_default_str());
    track(f, "timeout",
          sub->add_option("--timeout", f.timeout, "per-request timeout in seconds")
              ->capture_default_str());
    track(f, "max-retries",
          sub->add_option("--max-retries", f.max_retries, "retries after a failed request")
              ->capture_default_str());
}

void add_timestamp_opt(CLI::App* sub, StageFlags& f) {
    track(f, "timestamp",
          sub->add_option("--timestamp", f.timestamp,
                          "timestamp stamped into the bundle (pin it for byte-identical reruns)"));
}

audit::RunConfig resolve(const StageFlags& f) {
    auto used = [&](const char* key) {
        auto it = f.opts.find(key);
        return it != f.opts.end() && it->second->count() > 0;
    };
    audit::RunConfig cfg;
    if (used("config")) cfg = audit::load_run_config(f.config_path);
    if (used("seed")) cfg.seed = f.seed;
    if (used("out")) cfg.out_root = f.out_root;
    if (used("epochs")) cfg.train.epochs = f.epochs;
    if (used("learning-rate")) cfg.train.learning_rate = static_cast<float>(f.learning_rate);
    if (used("batch-size")) cfg.train.batch_size = f.batch_size;
    if (used("per-class-train")) cfg.per_class_train = f.per_class_train;
    if (used("per-class-test")) cfg.per_class_test = f.per_class_test;
    if (used("ci")) cfg.ci_method = audit::parse_ci_method(f.ci);
    if (used("rates")) cfg.csv_rates = audit::parse_rate_format(f.rates);
    if (used("checkpoint")) cfg.checkpoint_override = f.checkpoint;
    if (used("epsilon")) cfg.defend_epsilon = f.epsilon;
    if (used("corpus")) cfg.corpus_path = f.corpus;
    if (used("endpoint-url")) cfg.endpoint_url = f.endpoint_url;
    if (used("model")) cfg.lang_models = f.models;
    if (used("fixture")) cfg.lang_fixtures = f.fixtures;
    if (used("lenient")) cfg.failure_mode = audit::FailureMode::lenient;
    if (used("parallelism")) cfg.lang_parallelism = f.parallelism;
    if (used("timeout")) cfg.lang_timeout_seconds = f.timeout;
    if (used("max-retries")) cfg.lang_max_retries = f.max_retries;
    if (used("timestamp")) cfg.timestamp = f.timestamp;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Safety audit toolkit: adversarial robustness of a compact chest X-ray classifier "
        "and diagnostic drift of multilingual triage endpoints"};
    app.set_version_flag("--version", "auditkit 0.1.0");
    app.require_subcommand(1);

    StageFlags train_f, attack_f, defend_f, lang_f, report_f, all_f;

    CLI::App* train_cmd = app.add_subcommand(
        "train", "train the classifier on the synthetic benchmark and checkpoint it");
    add_common(train_cmd, train_f);
    add_train_opts(train_cmd, train_f);

    CLI::App* attack_cmd = app.add_subcommand(
        "attack", "sweep the gradient attack over the epsilon grid and chart the decay");
    add_common(attack_cmd, attack_f);
    add_ci_opt(attack_cmd, attack_f);
    add_checkpoint_opt(attack_cmd, attack_f);
    add_rates_opt(attack_cmd, attack_f);

    CLI::App* defend_cmd = app.add_subcommand(
        "defend", "stress-test the three mitigations at a fixed attack strength");
    add_common(defend_cmd, defend_f);
    add_epsilon_opt(defend_cmd, defend_f);
    add_checkpoint_opt(defend_cmd, defend_f);

    CLI::App* lang_cmd = app.add_subcommand(
        "lang-audit", "audit completion endpoints for diagnostic drift across language registers");
    add_common(lang_cmd, lang_f);
    add_lang_opts(lang_cmd, lang_f);

    CLI::App* report_cmd = app.add_subcommand(
        "report", "assemble the audit bundle from this run's stage artifacts");
    add_common(report_cmd, report_f);
    add_checkpoint_opt(report_cmd, report_f);
    add_epsilon_opt(report_cmd, report_f);
    add_timestamp_opt(report_cmd, report_f);
    add_rates_opt(report_cmd, report_f);

    CLI::App* all_cmd =
        app.add_subcommand("audit-all", "run every stage in order and assemble the bundle");
    add_common(all_cmd, all_f);
    add_train_opts(all_cmd, all_f);
    add_ci_opt(all_cmd, all_f);
    add_checkpoint_opt(all_cmd, all_f);
    add_epsilon_opt(all_cmd, all_f);
    add_lang_opts(all_cmd, all_f);
    add_timestamp_opt(all_cmd, all_f);
    add_rates_opt(all_cmd, all_f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) {
            audit::run_train(resolve(train_f), std::cout);
        } else if (attack_cmd->parsed()) {
            audit::run_attack(resolve(attack_f), std::cout);
        } else if (defend_cmd->parsed()) {
            audit::run_defend(resolve(defend_f), std::cout);
        } else if (lang_cmd->parsed()) {
            audit::run_lang_audit(resolve(lang_f), std::cout);
        } else if (report_cmd->parsed()) {
            audit::run_report(resolve(report_f), std::cout);
        } else if (all_cmd->parsed()) {
            audit::run_audit_all(resolve(all_f), std::cout);
        }
        return 0;
    } catch (const audit::endpoint_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const audit::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const audit::validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const audit::usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
