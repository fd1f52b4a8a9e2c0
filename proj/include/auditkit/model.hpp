#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "auditkit/data.hpp"
#include "auditkit/ops.hpp"
#include "auditkit/rng.hpp"
#include "auditkit/tensor.hpp"

namespace audit {

struct MicroDenseNetConfig {
    int in_channels = 1;
    int image_size = 32;
    int num_classes = 3;
    int stem_channels = 16;
    int blocks = 2;            // dense blocks
    int layers_per_block = 3;  // conv layers per block
    int growth = 8;            // channels each dense layer contributes

    void check_invariants() const {
        if (in_channels != 1 && in_channels != 3)
            throw validation_error("model channels must be 1 or 3, got " +
                                   std::to_string(in_channels));
        if (image_size < 16)
            throw validation_error("model image size must be >= 16, got " +
                                   std::to_string(image_size));
        if (num_classes < 2 || stem_channels < 1 || blocks < 1 || layers_per_block < 1 ||
            growth < 1)
            throw validation_error("model config fields must be positive");
        // one 2x2 transition follows every block but the last
        int spatial = image_size;
        for (int b = 1; b < blocks; ++b) {
            if (spatial % 2 != 0)
                throw validation_error("image size " + std::to_string(image_size) +
                                       " does not survive " + std::to_string(blocks - 1) +
                                       " halving transitions");
            spatial /= 2;
        }
    }

    // Channel count entering dense layer l of block b.
    int layer_in_channels(int b, int l) const {
        int c = stem_channels;
        for (int bb = 0; bb < b; ++bb) c += layers_per_block * growth;
        return c + l * growth;
    }

    int head_in_channels() const {
        return stem_channels + blocks * layers_per_block * growth;
    }
};

// Densely connected micro CNN: a stem conv, then blocks where every layer
// consumes the concatenation of the block input and all earlier layer
// outputs, 2x2 average-pool transitions, global average pooling, and a
// linear head. Parameters live in a flat list ordered stem, blocks in
// order (weight then bias per conv), head.
template <typename S>
struct MicroDenseNetT {
    MicroDenseNetConfig cfg;
    NormalizationStats stats;
    std::vector<ClassLabel> labels;
    std::vector<TensorT<S>> params;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }
};

using MicroDenseNet = MicroDenseNetT<float>;

// Deterministic Kaiming-uniform fan-in init from the seeded generator;
// biases start at zero.
template <typename S>
MicroDenseNetT<S> make_model(const MicroDenseNetConfig& cfg, const NormalizationStats& stats,
                             std::uint64_t seed,
                             std::vector<ClassLabel> labels = default_labels()) {
    cfg.check_invariants();
    stats.check_invariants();
    if (stats.channels() != cfg.in_channels)
        throw validation_error("model expects " + std::to_string(cfg.in_channels) +
                               " channels but stats cover " + std::to_string(stats.channels()));
    if (static_cast<int>(labels.size()) != cfg.num_classes)
        throw validation_error("model has " + std::to_string(cfg.num_classes) + " classes but " +
                               std::to_string(labels.size()) + " label names");
    MicroDenseNetT<S> model;
    model.cfg = cfg;
    model.stats = stats;
    model.labels = std::move(labels);
    SplitMix64 rng = SplitMix64(seed).fork(0x1417ULL);
    auto conv_pair = [&](int out_c, int in_c) {
        const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * 9));
        TensorT<S> w = TensorT<S>::zeros({out_c, in_c, 3, 3});
        for (std::int64_t i = 0; i < w.size(); ++i)
            w.data[i] = static_cast<S>(rng.uniform(-bound, bound));
        model.params.push_back(std::move(w));
        model.params.push_back(TensorT<S>::zeros({out_c}));
    };
    conv_pair(cfg.stem_channels, cfg.in_channels);
    for (int b = 0; b < cfg.blocks; ++b)
        for (int l = 0; l < cfg.layers_per_block; ++l)
            conv_pair(cfg.growth, cfg.layer_in_channels(b, l));
    const int head_in = cfg.head_in_channels();
    const double bound = std::sqrt(6.0 / head_in);
    TensorT<S> hw = TensorT<S>::zeros({cfg.num_classes, head_in});
    for (std::int64_t i = 0; i < hw.size(); ++i)
        hw.data[i] = static_cast<S>(rng.uniform(-bound, bound));
    model.params.push_back(std::move(hw));
    model.params.push_back(TensorT<S>::zeros({cfg.num_classes}));
    return model;
}

// Intermediate node ids from one forward pass, for connectivity probes.
struct ForwardTaps {
    int stem_out = -1;
    std::vector<std::vector<int>> layer_in;   // [block][layer]
    std::vector<std::vector<int>> layer_out;  // [block][layer]
};

// Runs the network on an already-normalized [N,C,H,W] tape node and returns
// the logits node. `param_ids` must come from register_params on the same
// tape.
template <typename S>
int forward(TapeT<S>& tape, const MicroDenseNetConfig& cfg, const std::vector<int>& param_ids,
            int input_id, ForwardTaps* taps = nullptr) {
    const TensorT<S>& x = tape.value(input_id);
    if (x.rank() != 4 || x.shape[1] != cfg.in_channels || x.shape[2] != cfg.image_size ||
        x.shape[3] != cfg.image_size)
        throw dimension_error("model expects input [N," + std::to_string(cfg.in_channels) + "," +
                              std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                              "], got " + shape_str(x.shape));
    std::size_t p = 0;
    auto next_pair = [&]() {
        const int w = param_ids[p], b = param_ids[p + 1];
        p += 2;
        return std::pair<int, int>(w, b);
    };
    auto [sw, sb] = next_pair();
    int cur = relu(tape, conv2d(tape, input_id, sw, sb, 1, 1));
    if (taps) {
        taps->stem_out = cur;
        taps->layer_in.assign(cfg.blocks, {});
        taps->layer_out.assign(cfg.blocks, {});
    }
    for (int b = 0; b < cfg.blocks; ++b) {
        for (int l = 0; l < cfg.layers_per_block; ++l) {
            if (taps) taps->layer_in[b].push_back(cur);
            auto [cw, cb] = next_pair();
            const int y = relu(tape, conv2d(tape, cur, cw, cb, 1, 1));
            if (taps) taps->layer_out[b].push_back(y);
            cur = concat_channels(tape, cur, y);
        }
        if (b + 1 < cfg.blocks) cur = avgpool2d(tape, cur, 2, 2);
    }
    const int spatial = tape.value(cur).shape[2];
    cur = flatten(tape, avgpool2d(tape, cur, spatial, spatial));
    auto [hw, hb] = next_pair();
    return linear(tape, cur, hw, hb);
}

// Leaves every parameter on the tape (with gradients enabled when
// `trainable`) and returns their node ids in parameter order.
template <typename S>
std::vector<int> register_params(TapeT<S>& tape, const MicroDenseNetT<S>& model, bool trainable) {
    std::vector<int> ids;
    ids.reserve(model.params.size());
    for (const auto& param : model.params) {
        TensorT<S> copy = param;
        copy.requires_grad = trainable;
        ids.push_back(tape.leaf(std::move(copy)));
    }
    return ids;
}

// Stacks per-image [C,H,W] pixel tensors into a normalized [N,C,H,W] batch.
template <typename S>
TensorT<S> batch_normalized(const std::vector<const Tensor*>& pixels,
                            const NormalizationStats& stats) {
    if (pixels.empty()) throw validation_error("empty batch");
    const Shape& one = pixels[0]->shape;
    const int n = static_cast<int>(pixels.size());
    TensorT<S> out = TensorT<S>::zeros({n, one[0], one[1], one[2]});
    const std::int64_t stride = shape_numel(one);
    for (int i = 0; i < n; ++i) {
        if (pixels[i]->shape != one)
            throw dimension_error("batch images disagree in shape: " + shape_str(one) + " vs " +
                                  shape_str(pixels[i]->shape));
        const Tensor norm = normalize_pixels(*pixels[i], stats);
        for (std::int64_t j = 0; j < stride; ++j)
            out.data[i * stride + j] = static_cast<S>(norm.data[j]);
    }
    return out;
}

struct TrainConfig {
    int epochs = 10;
    float learning_rate = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    int schedule_step = 3;    // epochs between decays
    float schedule_gamma = 0.5f;
    int batch_size = 30;
    std::uint64_t seed = 42;

    void check_invariants() const;
    // Learning rate in force during 1-based epoch e.
    float rate_for_epoch(int e) const;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainingTrace {
    std::vector<EpochStats> epochs;
};

void write_trace_csv(const std::string& path, const TrainingTrace& trace);

struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;  // row = true class, col = predicted

    explicit ConfusionMatrix(int classes = 0)
        : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}
    std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * k + pred]; }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * k + pred];
    }
    std::int64_t row_sum(int truth) const;
    std::int64_t total() const;
    std::int64_t diagonal() const;
};

struct Prediction {
    std::vector<ClassLabel> labels;
    Tensor probabilities;  // [N,K]
};

struct Evaluation {
    double overall_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    ConfusionMatrix confusion;
};

// Training loop: Adam with step-decayed learning rate, seeded shuffling,
// bit-deterministic for a fixed seed. Epoch loss is the running mean over
// batches; epoch accuracy is measured on the full training set after the
// epoch's updates.
TrainingTrace train(MicroDenseNet& model, const std::vector<LabeledImage>& train_set,
                    const TrainConfig& cfg);

Prediction predict(const MicroDenseNet& model, const std::vector<LabeledImage>& images);

// Cross-entropy of a single image against its own label, in nats,
// computed with the same log-space arithmetic training uses.
double sample_loss(const MicroDenseNet& model, const LabeledImage& image);

// Argmax with ties broken toward the lowest class index.
int argmax_row(const Tensor& probs, int row);

Evaluation evaluate(const MicroDenseNet& model, const std::vector<LabeledImage>& test_set);

// The counting arithmetic behind evaluate, separated so it can be pinned
// against published figures directly.
Evaluation metrics_from_confusion(const ConfusionMatrix& cm);

// Checkpoints are JSON with base64 float payloads; save/load round-trips
// bit-exactly.
void save_model(const std::string& path, const MicroDenseNet& model);
MicroDenseNet load_model(const std::string& path);

}  // namespace audit
