#include "auditkit/attack.hpp"

#include <string>
#include <utility>

#include "auditkit/ops.hpp"
#include "auditkit/parallel.hpp"

namespace audit {
namespace {

void check_attackable(const MicroDenseNet& model, const LabeledImage& image) {
    if (model.params.empty()) throw usage_error("attack needs a trained model, got one with no parameters");
    image.check_invariants();
    const Shape& s = image.pixels.shape;
    if (s[0] != model.cfg.in_channels || s[1] != model.cfg.image_size ||
        s[2] != model.cfg.image_size)
        throw usage_error("model expects [" + std::to_string(model.cfg.in_channels) + "," +
                          std::to_string(model.cfg.image_size) + "," +
                          std::to_string(model.cfg.image_size) + "] images, got " +
                          shape_str(s) + " for " + image.source_id);
    if (image.label.index < 0 || image.label.index >= model.cfg.num_classes)
        throw usage_error("label index " + std::to_string(image.label.index) +
                          " is outside the model's " + std::to_string(model.cfg.num_classes) +
                          " classes for " + image.source_id);
}

Tensor fgm_step(const Tensor& pixels, const Tensor& direction, const AttackConfig& cfg) {
    Tensor out = pixels;
    out.data =
        (pixels.data + cfg.epsilon * direction.data).max(cfg.clip_min).min(cfg.clip_max);
    return out;
}

}  // namespace

void AttackConfig::check_invariants() const {
    if (!(epsilon >= 0.0f && epsilon <= 1.0f))
        throw validation_error("attack epsilon must lie in [0,1], got " + std::to_string(epsilon));
    if (!(clip_min < clip_max))
        throw validation_error("attack clip range [" + std::to_string(clip_min) + "," +
                               std::to_string(clip_max) + "] is empty");
    if (targeted) throw validation_error("targeted attacks are not supported");
}

EpsilonGrid epsilon_grid() {
    EpsilonGrid grid;
    for (int i = 0; i < static_cast<int>(grid.levels.size()); ++i)
        grid.levels[static_cast<std::size_t>(i)] = 0.3 * static_cast<double>(i) / 14.0;
    return grid;
}

Tensor fgm_direction(const MicroDenseNet& model, const LabeledImage& image) {
    check_attackable(model, image);
    const Shape& s = image.pixels.shape;

    Tape tape;
    const std::vector<int> params = register_params(tape, model, false);
    Tensor batch = image.pixels.reshaped({1, s[0], s[1], s[2]});
    batch.requires_grad = true;
    const int x = tape.leaf(std::move(batch));
    const int normed = normalize_channels(tape, x, model.stats.mean, model.stats.stddev);
    const int logits = forward(tape, model.cfg, params, normed);
    const int loss = softmax_cross_entropy(tape, logits, {image.label.index});
    tape.backward(loss);

    const Tensor& g = tape.grad(x);
    Tensor direction = Tensor::zeros(s);
    for (std::int64_t i = 0; i < direction.size(); ++i) {
        const float gi = g.data[i];
        direction.data[i] = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
    }
    return direction;
}

LabeledImage fgm(const MicroDenseNet& model, const LabeledImage& image, const AttackConfig& cfg) {
    cfg.check_invariants();
    check_attackable(model, image);
    if (cfg.epsilon == 0.0f) return image;
    LabeledImage adv = image;
    adv.pixels = fgm_step(image.pixels, fgm_direction(model, image), cfg);
    return adv;
}

std::vector<LabeledImage> fgm_batch(const MicroDenseNet& model,
                                    const std::vector<LabeledImage>& images,
                                    const AttackConfig& cfg) {
    cfg.check_invariants();
    std::vector<LabeledImage> out(images.size());
    parallel_for(static_cast<std::int64_t>(images.size()),
                 [&](std::int64_t i) { out[static_cast<std::size_t>(i)] = fgm(model, images[static_cast<std::size_t>(i)], cfg); });
    return out;
}

SweepResult robustness_sweep(const MicroDenseNet& model, const std::vector<LabeledImage>& test_set,
                             const EpsilonGrid& grid, CIMethod ci) {
    if (test_set.empty()) throw validation_error("robustness sweep needs a non-empty test set");
    const std::int64_t n = static_cast<std::int64_t>(test_set.size());

    // The loss gradient does not depend on epsilon, so each image's sign
    // map is computed once and reused across the whole grid. This matches
    // per-level fgm calls bit for bit.
    std::vector<Tensor> directions(test_set.size());
    parallel_for(n, [&](std::int64_t i) {
        directions[static_cast<std::size_t>(i)] = fgm_direction(model, test_set[static_cast<std::size_t>(i)]);
    });

    SweepResult result;
    result.ci_method = ci;
    result.rows.reserve(grid.levels.size());
    for (const double level : grid.levels) {
        AttackConfig cfg;
        cfg.epsilon = static_cast<float>(level);
        cfg.check_invariants();
        std::vector<LabeledImage> adv(test_set.size());
        for (std::size_t i = 0; i < test_set.size(); ++i) {
            adv[i] = test_set[i];
            if (cfg.epsilon != 0.0f)
                adv[i].pixels = fgm_step(test_set[i].pixels, directions[i], cfg);
        }
        const Evaluation ev = evaluate(model, adv);
        const int correct = static_cast<int>(ev.confusion.diagonal());
        const ProportionCI interval = ci == CIMethod::wilson
                                          ? wilson_interval(correct, static_cast<int>(n))
                                          : wald_interval(correct, static_cast<int>(n));
        SweepRow row;
        row.epsilon = level;
        row.accuracy = ev.overall_accuracy;
        row.ci_lower = interval.lower;
        row.ci_upper = interval.upper;
        row.per_class_accuracy = ev.per_class_accuracy;
        row.confusion = ev.confusion;
        result.rows.push_back(std::move(row));
    }
    return result;
}

Tensor perturbation_map(const LabeledImage& clean, const LabeledImage& adv, float amplification) {
    if (clean.pixels.shape != adv.pixels.shape)
        throw dimension_error("perturbation map needs matching shapes, got " +
                              shape_str(clean.pixels.shape) + " vs " + shape_str(adv.pixels.shape));
    Tensor map = Tensor::zeros(clean.pixels.shape);
    map.data = (0.5f + amplification * (adv.pixels.data - clean.pixels.data)).max(0.0f).min(1.0f);
    return map;
}

}  // namespace audit
