#include "auditkit/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "auditkit/ops.hpp"
#include "auditkit/rng.hpp"

namespace audit {
namespace {

// Half-sample reflection: -1 maps to 0, -2 to 1, n to n-1, and so on,
// folding repeatedly when the radius exceeds the image.
int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0)
            i = -i - 1;
        else
            i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace

int SmoothingConfig::radius() const {
    return static_cast<int>(std::floor(truncate * sigma + 0.5f));
}

void SmoothingConfig::check_invariants() const {
    if (!(sigma > 0.0f))
        throw validation_error("smoothing sigma must be positive, got " + std::to_string(sigma));
    if (!(truncate > 0.0f))
        throw validation_error("smoothing truncate must be positive, got " +
                               std::to_string(truncate));
}

std::vector<double> gaussian_kernel(float sigma, float truncate) {
    SmoothingConfig cfg;
    cfg.sigma = sigma;
    cfg.truncate = truncate;
    cfg.check_invariants();
    const int r = cfg.radius();
    std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
    const double s2 = 2.0 * static_cast<double>(sigma) * static_cast<double>(sigma);
    double sum = 0.0;
    for (int k = -r; k <= r; ++k) {
        const double w = std::exp(-static_cast<double>(k) * k / s2);
        taps[static_cast<std::size_t>(k + r)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

LabeledImage gaussian_smooth(const LabeledImage& img, const SmoothingConfig& cfg) {
    cfg.check_invariants();
    img.check_invariants();
    const std::vector<double> taps = gaussian_kernel(cfg.sigma, cfg.truncate);
    const int r = cfg.radius();
    const int c = img.pixels.dim(0), h = img.pixels.dim(1), w = img.pixels.dim(2);

    // horizontal pass in double, then vertical, per channel
    std::vector<double> mid(static_cast<std::size_t>(img.pixels.size()));
    auto mid_at = [&](int cc, int y, int x) -> double& {
        return mid[(static_cast<std::size_t>(cc) * h + y) * w + x];
    };
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -r; k <= r; ++k)
                    acc += taps[static_cast<std::size_t>(k + r)] *
                           static_cast<double>(img.pixels.at3(cc, y, reflect_index(x + k, w)));
                mid_at(cc, y, x) = acc;
            }

    LabeledImage out = img;
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -r; k <= r; ++k)
                    acc += taps[static_cast<std::size_t>(k + r)] * mid_at(cc, reflect_index(y + k, h), x);
                out.pixels.at3(cc, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

void EnsembleConfig::check_invariants() const {
    if (votes < 1)
        throw validation_error("ensemble needs at least one vote, got " + std::to_string(votes));
    if (max_shift < 0)
        throw validation_error("ensemble max_shift must be >= 0, got " + std::to_string(max_shift));
}

Tensor shift_image(const Tensor& chw, int dx, int dy) {
    if (chw.rank() != 3)
        throw validation_error("shift_image expects [C,H,W], got " + shape_str(chw.shape));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out = Tensor::zeros(chw.shape);
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y) {
            const int sy = y - dy;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
                const int sx = x - dx;
                if (sx < 0 || sx >= w) continue;
                out.at3(cc, y, x) = chw.at3(cc, sy, sx);
            }
        }
    return out;
}

Tensor hflip_image(const Tensor& chw) {
    if (chw.rank() != 3)
        throw validation_error("hflip_image expects [C,H,W], got " + shape_str(chw.shape));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out = Tensor::zeros(chw.shape);
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at3(cc, y, x) = chw.at3(cc, y, w - 1 - x);
    return out;
}

int resolve_vote(const std::vector<int>& tally, const Tensor& mean_probs) {
    if (tally.empty()) throw validation_error("resolve_vote: empty tally");
    if (mean_probs.size() != static_cast<std::int64_t>(tally.size()))
        throw validation_error("resolve_vote: tally covers " + std::to_string(tally.size()) +
                               " classes but probabilities cover " +
                               std::to_string(mean_probs.size()));
    int best = 0;
    for (std::size_t c = 1; c < tally.size(); ++c) {
        const auto ci = static_cast<std::int64_t>(c);
        if (tally[c] > tally[static_cast<std::size_t>(best)] ||
            (tally[c] == tally[static_cast<std::size_t>(best)] &&
             mean_probs.data[ci] > mean_probs.data[best]))
            best = static_cast<int>(c);
    }
    return best;
}

EnsembleOutcome ensemble_predict(const MicroDenseNet& model, const LabeledImage& img,
                                 const EnsembleConfig& cfg) {
    cfg.check_invariants();
    const int k = model.cfg.num_classes;

    SplitMix64 stream(cfg.seed);
    std::vector<LabeledImage> variants;
    variants.reserve(static_cast<std::size_t>(cfg.votes));
    for (int v = 0; v < cfg.votes; ++v) {
        const bool flip = cfg.flip_allowed && stream.bernoulli(0.5);
        const int dx = static_cast<int>(stream.uniform_int(-cfg.max_shift, cfg.max_shift));
        const int dy = static_cast<int>(stream.uniform_int(-cfg.max_shift, cfg.max_shift));
        LabeledImage variant = img;
        if (dx != 0 || dy != 0) variant.pixels = shift_image(variant.pixels, dx, dy);
        if (flip) variant.pixels = hflip_image(variant.pixels);
        variants.push_back(std::move(variant));
    }

    const Prediction pred = predict(model, variants);
    EnsembleOutcome out;
    out.vote_tally.assign(static_cast<std::size_t>(k), 0);
    out.mean_probabilities = Tensor::zeros({k});
    for (int v = 0; v < cfg.votes; ++v) {
        ++out.vote_tally[static_cast<std::size_t>(pred.labels[static_cast<std::size_t>(v)].index)];
        for (int c = 0; c < k; ++c)
            out.mean_probabilities.data[c] += pred.probabilities.at2(v, c);
    }
    out.mean_probabilities.data /= static_cast<float>(cfg.votes);
    out.label = label_by_index(model.labels, resolve_vote(out.vote_tally, out.mean_probabilities));
    return out;
}

void AdvTrainConfig::check_invariants() const {
    if (steps < 1)
        throw validation_error("adversarial training needs steps >= 1, got " +
                               std::to_string(steps));
    if (learning_rate < 0.0f)
        throw validation_error("adversarial training learning rate must be >= 0, got " +
                               std::to_string(learning_rate));
    if (batch_size < 1)
        throw validation_error("adversarial training batch size must be >= 1, got " +
                               std::to_string(batch_size));
}

MicroDenseNet mini_adversarial_train(const MicroDenseNet& model,
                                     const std::vector<LabeledImage>& train_images,
                                     const AdvTrainConfig& cfg, const AttackConfig& attack) {
    cfg.check_invariants();
    attack.check_invariants();
    if (train_images.empty())
        throw validation_error("adversarial training needs a non-empty image pool");

    MicroDenseNet hardened = model;
    const std::size_t np = hardened.params.size();
    std::vector<Tensor::Array> m(np), v(np);
    for (std::size_t i = 0; i < np; ++i) {
        m[i] = Tensor::Array::Zero(hardened.params[i].size());
        v[i] = Tensor::Array::Zero(hardened.params[i].size());
    }

    std::vector<std::size_t> order(train_images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uint64_t pass = 0;
    SplitMix64 stream = SplitMix64(cfg.seed).fork(0xad73a100ULL + pass);
    shuffle(order, stream);
    std::size_t cursor = 0;

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<LabeledImage> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i) {
            if (cursor == order.size()) {
                ++pass;
                stream = SplitMix64(cfg.seed).fork(0xad73a100ULL + pass);
                shuffle(order, stream);
                cursor = 0;
            }
            batch.push_back(train_images[order[cursor++]]);
        }

        // adversarial examples against the model as it currently stands
        const std::vector<LabeledImage> crafted = fgm_batch(hardened, batch, attack);

        std::vector<const Tensor*> pixels;
        std::vector<int> labels;
        for (const auto& img : crafted) {
            pixels.push_back(&img.pixels);
            labels.push_back(img.label.index);
        }
        Tape tape;
        const std::vector<int> param_ids = register_params(tape, hardened, true);
        const int x = tape.leaf(batch_normalized<float>(pixels, hardened.stats));
        const int logits = forward(tape, hardened.cfg, param_ids, x);
        const int loss = softmax_cross_entropy(tape, logits, labels);
        if (!std::isfinite(tape.value(loss)[0]))
            throw validation_error("adversarial fine-tuning diverged: non-finite loss at step " +
                                   std::to_string(step));
        tape.backward(loss);

        const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta1), step));
        const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta2), step));
        for (std::size_t i = 0; i < np; ++i) {
            const Tensor g = tape.grad(param_ids[i]);
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g.data;
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g.data * g.data;
            hardened.params[i].data -=
                cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_epsilon);
        }
    }
    return hardened;
}

const MitigationRow& MitigationReport::row(const std::string& condition) const {
    for (const auto& r : rows)
        if (r.condition == condition) return r;
    throw validation_error("mitigation report has no condition '" + condition + "'");
}

void compute_deltas(MitigationReport& report) {
    const double clean = report.row("clean").accuracy;
    for (auto& r : report.rows) r.delta_vs_clean = r.accuracy - clean;
}

std::string assess_condition(const std::string& condition, double accuracy, double clean_accuracy,
                             double undefended_accuracy) {
    if (condition == "clean") return accuracy >= 0.80 ? "Acceptable" : "Degraded baseline";
    if (condition == "adversarial-no-defense")
        return accuracy < clean_accuracy - 0.10 ? "Clinically dangerous" : "Within tolerance";
    if (accuracy < undefended_accuracy) return "Worse than no defence";
    if (accuracy >= clean_accuracy - 0.02) return "Full recovery";
    return "Partial recovery - insufficient";
}

MitigationReport mitigation_stress_test(const MicroDenseNet& model,
                                        const std::vector<LabeledImage>& train_images,
                                        const std::vector<LabeledImage>& test_set,
                                        double epsilon) {
    if (test_set.empty()) throw validation_error("stress test needs a non-empty test set");

    AttackConfig attack;
    attack.epsilon = static_cast<float>(epsilon);
    attack.check_invariants();

    // One adversarial batch, crafted once against the audited model, is
    // shared by every defended condition.
    const std::vector<LabeledImage> adversarial = fgm_batch(model, test_set, attack);

    const Evaluation clean = evaluate(model, test_set);
    const Evaluation undefended = evaluate(model, adversarial);

    std::vector<LabeledImage> smoothed;
    smoothed.reserve(adversarial.size());
    for (const auto& img : adversarial) smoothed.push_back(gaussian_smooth(img));
    const Evaluation gaussian = evaluate(model, smoothed);

    ConfusionMatrix ensemble_cm(model.cfg.num_classes);
    for (std::size_t i = 0; i < adversarial.size(); ++i) {
        EnsembleConfig ec;
        // one augmentation stream per image, all derived from one seed
        ec.seed = SplitMix64(ec.seed).fork(0x5eed0000ULL + i).next();
        const EnsembleOutcome vote = ensemble_predict(model, adversarial[i], ec);
        ++ensemble_cm.at(adversarial[i].label.index, vote.label.index);
    }
    const Evaluation ensemble = metrics_from_confusion(ensemble_cm);

    const MicroDenseNet hardened =
        mini_adversarial_train(model, train_images, AdvTrainConfig{}, attack);
    const Evaluation adv_trained = evaluate(hardened, adversarial);

    MitigationReport report;
    report.epsilon = epsilon;
    auto add = [&](const std::string& key, const std::string& display, const Evaluation& ev) {
        MitigationRow row;
        row.condition = key;
        row.display_name = display;
        row.accuracy = ev.overall_accuracy;
        row.per_class_accuracy = ev.per_class_accuracy;
        row.assessment =
            assess_condition(key, ev.overall_accuracy, clean.overall_accuracy,
                             undefended.overall_accuracy);
        report.rows.push_back(std::move(row));
    };
    add("clean", "Clean (no attack)", clean);
    add("adversarial-no-defense", "Adversarial - no defence", undefended);
    add("gaussian", "Defence 1: Gaussian Smoothing", gaussian);
    add("ensemble", "Defence 2: Ensemble Voting", ensemble);
    add("adv-train", "Defence 3: Mini Adversarial Training", adv_trained);
    compute_deltas(report);
    return report;
}

}  // namespace audit
