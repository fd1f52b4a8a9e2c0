#include "auditkit/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "auditkit/base64.hpp"

namespace audit {

void TrainConfig::check_invariants() const {
    if (epochs < 1) throw validation_error("epochs must be >= 1, got " + std::to_string(epochs));
    if (!(learning_rate > 0.0f)) throw validation_error("learning rate must be positive");
    if (!(schedule_gamma > 0.0f && schedule_gamma <= 1.0f))
        throw validation_error("schedule gamma must lie in (0,1]");
    if (schedule_step < 1) throw validation_error("schedule step must be >= 1");
    if (batch_size < 1) throw validation_error("batch size must be >= 1");
}

float TrainConfig::rate_for_epoch(int e) const {
    const int decays = (e - 1) / schedule_step;
    return learning_rate * static_cast<float>(std::pow(static_cast<double>(schedule_gamma), decays));
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
    std::int64_t s = 0;
    for (int p = 0; p < k; ++p) s += at(truth, p);
    return s;
}

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::diagonal() const {
    std::int64_t s = 0;
    for (int c = 0; c < k; ++c) s += at(c, c);
    return s;
}

int argmax_row(const Tensor& probs, int row) {
    int best = 0;
    for (int c = 1; c < probs.shape[1]; ++c)
        if (probs.at2(row, c) > probs.at2(row, best)) best = c;
    return best;
}

namespace {

constexpr int kPredictChunk = 60;

void check_images_fit(const MicroDenseNet& model, const std::vector<LabeledImage>& images) {
    for (const auto& img : images) {
        const Shape& s = img.pixels.shape;
        if (s.size() != 3 || s[0] != model.cfg.in_channels || s[1] != model.cfg.image_size ||
            s[2] != model.cfg.image_size)
            throw dimension_error("image " + img.source_id + " has shape " + shape_str(s) +
                                  ", model expects [" + std::to_string(model.cfg.in_channels) + "," +
                                  std::to_string(model.cfg.image_size) + "," +
                                  std::to_string(model.cfg.image_size) + "]");
    }
}

}  // namespace

TrainingTrace train(MicroDenseNet& model, const std::vector<LabeledImage>& train_set,
                    const TrainConfig& cfg) {
    cfg.check_invariants();
    if (train_set.empty()) throw validation_error("training set is empty");
    check_images_fit(model, train_set);
    for (const auto& img : train_set)
        if (img.label.index < 0 || img.label.index >= model.cfg.num_classes)
            throw validation_error("label index " + std::to_string(img.label.index) + " of " +
                                   img.source_id + " outside [0," +
                                   std::to_string(model.cfg.num_classes) + ")");

    const std::size_t np = model.params.size();
    std::vector<Tensor::Array> m(np), v(np);
    for (std::size_t i = 0; i < np; ++i) {
        m[i] = Tensor::Array::Zero(model.params[i].size());
        v[i] = Tensor::Array::Zero(model.params[i].size());
    }
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainingTrace trace;
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const float lr = cfg.rate_for_epoch(epoch);
        SplitMix64 stream = SplitMix64(cfg.seed).fork(0xe90c000ULL + static_cast<std::uint64_t>(epoch));
        shuffle(order, stream);

        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const Tensor*> pixels;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                pixels.push_back(&train_set[order[i]].pixels);
                labels.push_back(train_set[order[i]].label.index);
            }

            Tape tape;
            const std::vector<int> param_ids = register_params(tape, model, true);
            const int x = tape.leaf(batch_normalized<float>(pixels, model.stats));
            const int logits = forward(tape, model.cfg, param_ids, x);
            const int loss = softmax_cross_entropy(tape, logits, labels);
            const float batch_loss = tape.value(loss)[0];
            if (!std::isfinite(batch_loss))
                throw validation_error("training diverged: non-finite loss in epoch " +
                                       std::to_string(epoch) +
                                       " (learning rate too high or corrupt inputs)");
            tape.backward(loss);

            ++step;
            const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta1), step));
            const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta2), step));
            for (std::size_t i = 0; i < np; ++i) {
                const Tensor g = tape.grad(param_ids[i]);
                m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g.data;
                v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g.data * g.data;
                model.params[i].data -=
                    lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_epsilon);
            }
            loss_sum += static_cast<double>(batch_loss) * static_cast<double>(end - start);
            seen += static_cast<std::int64_t>(end - start);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(seen);
        stats.train_accuracy = evaluate(model, train_set).overall_accuracy;
        trace.epochs.push_back(stats);
    }
    return trace;
}

Prediction predict(const MicroDenseNet& model, const std::vector<LabeledImage>& images) {
    if (images.empty()) throw validation_error("predict: no images given");
    check_images_fit(model, images);
    const int n = static_cast<int>(images.size());
    const int k = model.cfg.num_classes;
    Prediction out;
    out.probabilities = Tensor::zeros({n, k});
    out.labels.reserve(images.size());
    for (int start = 0; start < n; start += kPredictChunk) {
        const int end = std::min(n, start + kPredictChunk);
        std::vector<const Tensor*> pixels;
        for (int i = start; i < end; ++i) pixels.push_back(&images[i].pixels);
        Tape tape;
        const std::vector<int> param_ids = register_params(tape, model, false);
        const int x = tape.leaf(batch_normalized<float>(pixels, model.stats));
        const int logits = forward(tape, model.cfg, param_ids, x);
        const Tensor probs = softmax(tape.value(logits));
        for (int i = start; i < end; ++i)
            for (int c = 0; c < k; ++c) out.probabilities.at2(i, c) = probs.at2(i - start, c);
    }
    for (int i = 0; i < n; ++i)
        out.labels.push_back(label_by_index(model.labels, argmax_row(out.probabilities, i)));
    return out;
}

double sample_loss(const MicroDenseNet& model, const LabeledImage& image) {
    check_images_fit(model, {image});
    if (image.label.index < 0 || image.label.index >= model.cfg.num_classes)
        throw validation_error("label index " + std::to_string(image.label.index) + " of " +
                               image.source_id + " outside [0," +
                               std::to_string(model.cfg.num_classes) + ")");
    Tape tape;
    const std::vector<int> param_ids = register_params(tape, model, false);
    const int x = tape.leaf(batch_normalized<float>({&image.pixels}, model.stats));
    const int logits = forward(tape, model.cfg, param_ids, x);
    const int loss = softmax_cross_entropy(tape, logits, {image.label.index});
    return static_cast<double>(tape.value(loss).data[0]);
}

Evaluation metrics_from_confusion(const ConfusionMatrix& cm) {
    Evaluation ev{0.0, {}, cm};
    const std::int64_t total = cm.total();
    if (total == 0) throw validation_error("empty confusion matrix");
    ev.overall_accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(total);
    for (int c = 0; c < cm.k; ++c) {
        const std::int64_t row = cm.row_sum(c);
        ev.per_class_accuracy.push_back(
            row > 0 ? static_cast<double>(cm.at(c, c)) / static_cast<double>(row) : 0.0);
    }
    return ev;
}

Evaluation evaluate(const MicroDenseNet& model, const std::vector<LabeledImage>& test_set) {
    if (test_set.empty()) throw validation_error("evaluate: empty test set");
    const Prediction pred = predict(model, test_set);
    ConfusionMatrix cm(model.cfg.num_classes);
    for (std::size_t i = 0; i < test_set.size(); ++i)
        ++cm.at(test_set[i].label.index, pred.labels[i].index);
    return metrics_from_confusion(cm);
}

void write_trace_csv(const std::string& path, const TrainingTrace& trace) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "epoch,loss,accuracy\n";
    char line[96];
    for (const auto& e : trace.epochs) {
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f\n", e.epoch, e.loss, e.train_accuracy);
        out << line;
    }
    if (!out) throw io_error("short write: " + path);
}

void save_model(const std::string& path, const MicroDenseNet& model) {
    nlohmann::json doc;
    doc["format"] = "auditkit-model";
    doc["version"] = 1;
    doc["config"] = {{"in_channels", model.cfg.in_channels},
                     {"image_size", model.cfg.image_size},
                     {"num_classes", model.cfg.num_classes},
                     {"stem_channels", model.cfg.stem_channels},
                     {"blocks", model.cfg.blocks},
                     {"layers_per_block", model.cfg.layers_per_block},
                     {"growth", model.cfg.growth}};
    doc["stats"] = {{"mean", model.stats.mean}, {"stddev", model.stats.stddev}};
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& l : model.labels) labels.push_back({{"index", l.index}, {"name", l.name}});
    doc["labels"] = labels;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : model.params) {
        params.push_back(
            {{"shape", p.shape},
             {"data", base64_encode(reinterpret_cast<const std::uint8_t*>(p.data.data()),
                                    static_cast<std::size_t>(p.size()) * sizeof(float))}});
    }
    doc["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw io_error("short write: " + path);
}

MicroDenseNet load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open checkpoint " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    try {
        if (doc.at("format") != "auditkit-model")
            throw validation_error("not a model checkpoint: " + path);
        if (doc.at("version") != 1)
            throw validation_error("unsupported checkpoint version in " + path);
        MicroDenseNet model;
        const auto& c = doc.at("config");
        model.cfg.in_channels = c.at("in_channels");
        model.cfg.image_size = c.at("image_size");
        model.cfg.num_classes = c.at("num_classes");
        model.cfg.stem_channels = c.at("stem_channels");
        model.cfg.blocks = c.at("blocks");
        model.cfg.layers_per_block = c.at("layers_per_block");
        model.cfg.growth = c.at("growth");
        model.cfg.check_invariants();
        model.stats.mean = doc.at("stats").at("mean").get<std::vector<float>>();
        model.stats.stddev = doc.at("stats").at("stddev").get<std::vector<float>>();
        model.stats.check_invariants();
        for (const auto& l : doc.at("labels"))
            model.labels.push_back({l.at("index").get<int>(), l.at("name").get<std::string>()});
        for (const auto& p : doc.at("params")) {
            const Shape shape = p.at("shape").get<Shape>();
            const std::vector<std::uint8_t> bytes = base64_decode(p.at("data").get<std::string>());
            if (static_cast<std::int64_t>(bytes.size()) !=
                shape_numel(shape) * static_cast<std::int64_t>(sizeof(float)))
                throw validation_error("checkpoint payload length does not match shape " +
                                       shape_str(shape) + " in " + path);
            Tensor t = Tensor::zeros(shape);
            std::memcpy(t.data.data(), bytes.data(), bytes.size());
            model.params.push_back(std::move(t));
        }
        // Shape audit against the architecture the config describes.
        const MicroDenseNet ref = make_model<float>(model.cfg, model.stats, 0, model.labels);
        if (ref.params.size() != model.params.size())
            throw validation_error("checkpoint has " + std::to_string(model.params.size()) +
                                   " parameter tensors, architecture needs " +
                                   std::to_string(ref.params.size()));
        for (std::size_t i = 0; i < ref.params.size(); ++i)
            if (ref.params[i].shape != model.params[i].shape)
                throw validation_error("checkpoint parameter " + std::to_string(i) + " has shape " +
                                       shape_str(model.params[i].shape) + ", expected " +
                                       shape_str(ref.params[i].shape));
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("malformed checkpoint " + path + ": " + e.what());
    }
}

}  // namespace audit
