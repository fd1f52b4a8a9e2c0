#pragma once

#include <array>
#include <vector>

#include "auditkit/data.hpp"
#include "auditkit/model.hpp"
#include "auditkit/stats.hpp"

namespace audit {

// Budget for the single-step L-infinity attack. epsilon is a fraction of
// the full intensity range: it lives in pixel space [0,1] regardless of
// the normalization the model applies internally.
struct AttackConfig {
    float epsilon = 0.0f;
    float clip_min = 0.0f;
    float clip_max = 1.0f;
    bool targeted = false;  // reserved; only the untargeted attack exists

    void check_invariants() const;
};

struct EpsilonGrid {
    std::array<double, 15> levels{};
};

// The fifteen attack strengths of the decay experiment, linearly spaced
// from 0 to 0.3.
EpsilonGrid epsilon_grid();

struct SweepRow {
    double epsilon = 0.0;
    double accuracy = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::vector<double> per_class_accuracy;
    ConfusionMatrix confusion;
};

struct SweepResult {
    CIMethod ci_method = CIMethod::wilson;
    std::vector<SweepRow> rows;
};

// Sign of the pixel-space loss gradient, the direction a fast-gradient
// step moves in. The gradient chains through the model's normalization;
// entries are -1, 0 or +1, with exactly-zero gradients mapping to 0.
Tensor fgm_direction(const MicroDenseNet& model, const LabeledImage& image);

// x_adv = clip(x + epsilon * sign(grad_x J), clip_min, clip_max). The
// label field carries the ground truth through unchanged; an epsilon of
// 0 returns the input bit for bit.
LabeledImage fgm(const MicroDenseNet& model, const LabeledImage& image, const AttackConfig& cfg);

// Attacks images independently (in parallel when cores allow); results
// line up index for index with the input.
std::vector<LabeledImage> fgm_batch(const MicroDenseNet& model,
                                    const std::vector<LabeledImage>& images,
                                    const AttackConfig& cfg);

// Attacks every image at every grid level and evaluates the model on each
// adversarial set, attaching a confidence interval to the overall
// accuracy. The epsilon-0 row is the clean baseline. All-or-nothing: any
// attack failure aborts the sweep.
SweepResult robustness_sweep(const MicroDenseNet& model, const std::vector<LabeledImage>& test_set,
                             const EpsilonGrid& grid, CIMethod ci = CIMethod::wilson);

// Renders the signed perturbation around mid-gray:
// clip(0.5 + amplification * (adv - clean), 0, 1).
Tensor perturbation_map(const LabeledImage& clean, const LabeledImage& adv,
                        float amplification = 10.0f);

}  // namespace audit
