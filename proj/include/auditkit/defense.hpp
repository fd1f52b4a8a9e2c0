#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "auditkit/attack.hpp"
#include "auditkit/data.hpp"
#include "auditkit/model.hpp"

namespace audit {

// Gaussian blur applied in pixel space before the model ever sees the
// image. Borders reflect about the half-sample edge; the kernel is the
// truncated discrete Gaussian, normalized to sum 1.
struct SmoothingConfig {
    float sigma = 1.0f;
    float truncate = 4.0f;

    int radius() const;
    void check_invariants() const;
};

// The 1D kernel the smoother uses: 2*radius+1 taps proportional to
// exp(-k^2 / (2 sigma^2)), normalized. Exposed so tests can pin the blur
// against the kernel table directly.
std::vector<double> gaussian_kernel(float sigma, float truncate);

LabeledImage gaussian_smooth(const LabeledImage& img, const SmoothingConfig& cfg = {});

// Majority vote over seeded geometric augmentations: each vote shifts by
// integer (dx, dy) drawn uniformly from [-max_shift, max_shift] with
// zero fill, then flips horizontally with probability one half when
// allowed.
struct EnsembleConfig {
    int votes = 5;
    int max_shift = 5;
    bool flip_allowed = true;
    std::uint64_t seed = 42;

    void check_invariants() const;
};

// out(y, x) = in(y - dy, x - dx), zero where that falls off the image.
Tensor shift_image(const Tensor& chw, int dx, int dy);
Tensor hflip_image(const Tensor& chw);

struct EnsembleOutcome {
    ClassLabel label;
    std::vector<int> vote_tally;  // votes per class index
    Tensor mean_probabilities;    // [K], mean softmax over the votes
};

// Plurality winner; ties go to the highest mean probability among the
// tied classes, and any remaining tie to the lowest class index. Pure.
int resolve_vote(const std::vector<int>& tally, const Tensor& mean_probs);

EnsembleOutcome ensemble_predict(const MicroDenseNet& model, const LabeledImage& img,
                                 const EnsembleConfig& cfg);

// A short burst of adversarial fine-tuning: each step crafts a
// fast-gradient batch against the model as it currently stands, then
// takes one Adam step on the adversarial cross-entropy. The attack
// budget rides in as an AttackConfig so there is exactly one source of
// truth for epsilon.
struct AdvTrainConfig {
    int steps = 5;
    float learning_rate = 1e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    int batch_size = 30;
    std::uint64_t seed = 42;

    void check_invariants() const;
};

// Returns the hardened model; the input model is never touched.
MicroDenseNet mini_adversarial_train(const MicroDenseNet& model,
                                     const std::vector<LabeledImage>& train_images,
                                     const AdvTrainConfig& cfg, const AttackConfig& attack);

struct MitigationRow {
    std::string condition;     // stable key: clean, adversarial-no-defense, ...
    std::string display_name;  // table heading, e.g. "Defence 1: Gaussian Smoothing"
    double accuracy = 0.0;
    double delta_vs_clean = 0.0;  // fraction, filled by compute_deltas
    std::vector<double> per_class_accuracy;
    std::string assessment;
};

struct MitigationReport {
    double epsilon = 0.0;
    std::vector<MitigationRow> rows;

    const MitigationRow& row(const std::string& condition) const;
};

// Rewrites every row's delta as accuracy minus the clean row's accuracy.
void compute_deltas(MitigationReport& report);

// Verdict rules, applied uniformly so the wording tracks the numbers:
// the clean row is "Acceptable" at 0.80 accuracy or better, otherwise
// "Degraded baseline"; the undefended adversarial row is "Clinically
// dangerous" when it falls more than 10 points below clean, otherwise
// "Within tolerance"; a defense scoring below the undefended row is
// "Worse than no defence", within 2 points of clean is "Full recovery",
// and anything between is "Partial recovery - insufficient".
std::string assess_condition(const std::string& condition, double accuracy, double clean_accuracy,
                             double undefended_accuracy);

// Crafts one adversarial batch at `epsilon` against `model`, then scores
// five conditions on it: clean baseline, no defense, smoothing, ensemble
// voting, and a model hardened by mini adversarial training (which
// fine-tunes on training-split images so the evaluation set stays
// untouched). Deterministic for a fixed model and seed.
MitigationReport mitigation_stress_test(const MicroDenseNet& model,
                                        const std::vector<LabeledImage>& train_images,
                                        const std::vector<LabeledImage>& test_set,
                                        double epsilon = 0.3 / 14.0);

}  // namespace audit
