#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auditkit/attack.hpp"
#include "auditkit/defense.hpp"
#include "auditkit/lingua.hpp"

#include <json.hpp>

namespace audit {

// 64-bit FNV-1a, the fingerprint hash used for checkpoints, corpora and
// bundle input tracking. Operates on the exact bytes it is handed.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& bytes);

// Lower-case, zero-padded 16-digit hex rendering of a hash value.
std::string hex64(std::uint64_t value);

struct ModelFingerprint {
    std::string architecture;
    std::uint64_t seed = 0;
    std::string checkpoint_hash;

    bool operator==(const ModelFingerprint&) const = default;
};

// Architecture string plus a hash covering the config, normalization
// stats, label names and every weight bit, so a retrain, a relabel or a
// single flipped float all produce a different fingerprint.
ModelFingerprint fingerprint_model(const MicroDenseNet& model, std::uint64_t seed);

// Digest of every vignette (id, register, text, truth) and the label set,
// in canonical corpus order.
std::string corpus_hash(const CorpusManifest& corpus);

// First grid level whose accuracy falls below one half, scanning rows in
// order; empty when the model never drops that far.
std::optional<double> danger_zone_threshold(const SweepResult& sweep);

// Everything the imaging side of an audit established about one model:
// identity, the decay sweep, where the per-class collapse begins, how the
// defenses fared, and the point the accuracy first leaves the coin-flip
// safety margin.
struct RobustnessMap {
    ModelFingerprint fingerprint;
    std::vector<std::string> class_names;
    double clean_accuracy = 0.0;
    SweepResult sweep;
    // Per-class accuracy at the first nonzero attack level.
    std::vector<double> first_attack_per_class;
    MitigationReport mitigation;
    std::optional<double> danger_zone_epsilon;

    // Re-derives every stored rate from the embedded confusion matrices
    // and cross-checks the derived fields against the sweep; a map whose
    // numbers cannot be reproduced from its own counts is rejected.
    void check_invariants() const;
};

RobustnessMap build_robustness_map(ModelFingerprint fingerprint,
                                   std::vector<std::string> class_names, SweepResult sweep,
                                   MitigationReport mitigation);

// The language side: which endpoint was audited over which corpus, one
// profile per model, and the head-to-head comparison once there are at
// least two.
struct DriftProfileDocument {
    std::string endpoint_url;
    double temperature = 0.0;
    std::string corpus_digest;
    std::vector<ClassLabel> labels;
    std::vector<DriftProfile> profiles;
    std::optional<ModelComparison> comparison;

    void check_invariants() const;
};

DriftProfileDocument build_drift_document(std::string endpoint_url, double temperature,
                                          const CorpusManifest& corpus,
                                          std::vector<DriftProfile> profiles);

// How rate columns print: four-decimal fractions (0.9800) or one-decimal
// percentages (98.0).
enum class RateFormat { fraction, percent };

// Writes "epsilon,accuracy,ci_lower,ci_upper" plus one line per sweep
// row, epsilon to three decimals, and a trailing newline.
void emit_decay_csv(const SweepResult& sweep, const std::string& path,
                    RateFormat rates = RateFormat::fraction);

struct DecayRow {
    double epsilon = 0.0;
    double accuracy = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
};

// Reads a decay CSV back, returning the numbers exactly as printed;
// percent-format files come back on the 0-100 scale.
std::vector<DecayRow> parse_decay_csv(const std::string& path);

// One image the attack flipped (or failed to flip), with the model's
// verdict on both versions. Predictions are class indices.
struct AdversarialExample {
    LabeledImage clean;
    LabeledImage adversarial;
    int clean_prediction = 0;
    int adversarial_prediction = 0;
};

// Renders the decay curve on its own, for the attack stage before any
// mitigation results exist. The bundle's robustness_decay.svg carries the
// same bytes.
void emit_decay_figure(const SweepResult& sweep, const std::string& path);

// Writes robustness_decay.svg, per_class_collapse.svg and
// mitigation_bars.svg, plus adversarial_triptych.svg when examples are
// given. Returns the paths in that order. Pure string assembly: fixed
// inputs produce identical bytes.
std::vector<std::string> emit_robustness_figures(const RobustnessMap& map,
                                                 const std::vector<AdversarialExample>& examples,
                                                 const std::string& out_dir);

// One per-case heatmap per profile, named drift_heatmap_<model>.svg with
// the model name slugged for the filesystem.
std::vector<std::string> emit_drift_figures(const std::vector<DriftProfile>& profiles,
                                            const std::string& out_dir);

// The interpretation column of the decay table. Thresholds mirror the
// mitigation assessment rules: at or below chance plus five points reads
// as effectively random, below one half is the danger zone, more than
// ten points under clean is a dangerous drop, anything else is within
// tolerance.
std::string sweep_interpretation(double epsilon, double accuracy, double clean_accuracy,
                                 double chance);

std::string format_sweep_table(const SweepResult& sweep);
std::string format_mitigation_table(const MitigationReport& report);
std::string format_drift_table(const std::vector<DriftProfile>& profiles);

extern const char* const kBundleSchemaVersion;

// The complete plain-text report. Either half may be null; pass at least
// one.
std::string format_summary(const RobustnessMap* map, const DriftProfileDocument* drift,
                           const std::string& generated_at);

struct BundleOptions {
    // Timestamp stamped into every artifact. The caller supplies it so a
    // pinned value reproduces the bundle byte for byte.
    std::string generated_at;
    RateFormat csv_rates = RateFormat::fraction;
};

// Writes robustness_map.json and robustness_decay.csv (when map is
// given), drift_profile.json (when drift is given) and summary.txt into
// out_dir, creating the directory if needed. Returns the paths written.
std::vector<std::string> emit_audit_bundle(const RobustnessMap* map,
                                           const DriftProfileDocument* drift,
                                           const std::string& out_dir, const BundleOptions& opts);

// Struct <-> JSON for the stage and bundle artifacts. Every emitter has a
// parser; parsing an emitted document reproduces the struct field for
// field. Parsers re-derive the stored rates, flip lists and comparisons
// from the embedded counts and reject documents whose numbers cannot be
// reproduced, so a hand-edited artifact fails here instead of flowing
// into a report.
nlohmann::json sweep_to_json(const SweepResult& sweep);
SweepResult sweep_from_json(const nlohmann::json& doc);
nlohmann::json mitigation_to_json(const MitigationReport& report);
MitigationReport mitigation_from_json(const nlohmann::json& doc);
nlohmann::json robustness_map_to_json(const RobustnessMap& map, const std::string& generated_at);
RobustnessMap robustness_map_from_json(const nlohmann::json& doc);
nlohmann::json drift_document_to_json(const DriftProfileDocument& drift,
                                      const std::string& generated_at);
DriftProfileDocument drift_document_from_json(const nlohmann::json& doc);

// Artifact JSON IO. Writing is dump(2) plus a trailing newline; reading
// keeps every field it finds, known or not, so bundles written by newer
// versions stay loadable.
nlohmann::json read_json_artifact(const std::string& path);
void write_json_artifact(const std::string& path, const nlohmann::json& doc);

}  // namespace audit
