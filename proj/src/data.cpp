#include "auditkit/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "auditkit/image_io.hpp"
#include "auditkit/rng.hpp"

namespace fs = std::filesystem;

namespace audit {

std::vector<ClassLabel> default_labels() {
    return {{0, "COVID-19"}, {1, "Non-COVID Pneumonia"}, {2, "Normal"}};
}

const ClassLabel& label_by_index(const std::vector<ClassLabel>& labels, int index) {
    for (const auto& l : labels)
        if (l.index == index) return l;
    throw validation_error("no class with index " + std::to_string(index));
}

const ClassLabel& label_by_name(const std::vector<ClassLabel>& labels, const std::string& name) {
    for (const auto& l : labels)
        if (l.name == name) return l;
    throw validation_error("no class named '" + name + "'");
}

void LabeledImage::check_invariants() const {
    if (pixels.rank() != 3)
        throw validation_error("image " + source_id + " must be [C,H,W], got " +
                               shape_str(pixels.shape));
    const int c = pixels.dim(0);
    if (c != 1 && c != 3)
        throw validation_error("image " + source_id + " has " + std::to_string(c) + " channels");
    if (pixels.data.minCoeff() < 0.0f || pixels.data.maxCoeff() > 1.0f)
        throw validation_error("image " + source_id + " has pixels outside [0,1]");
}

NormalizationStats NormalizationStats::imagenet() {
    return {{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}};
}

NormalizationStats NormalizationStats::grayscale() { return {{0.5f}, {0.5f}}; }

void NormalizationStats::check_invariants() const {
    if (mean.empty() || mean.size() != stddev.size())
        throw validation_error("normalization stats must pair means with stddevs");
    for (float s : stddev)
        if (!(s > 0.0f)) throw validation_error("normalization stddev must be positive");
}

void SplitConfig::check_invariants() const {
    if (per_class_train < 1 || per_class_test < 1)
        throw validation_error("split counts must be positive, got train=" +
                               std::to_string(per_class_train) +
                               " test=" + std::to_string(per_class_test));
}

Tensor bilinear_resize(const Tensor& chw, int target_size) {
    if (chw.rank() != 3)
        throw validation_error("bilinear_resize expects [C,H,W], got " + shape_str(chw.shape));
    if (target_size < 1)
        throw validation_error("bilinear_resize target must be >= 1, got " +
                               std::to_string(target_size));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (h == target_size && w == target_size) return chw;
    Tensor out = Tensor::zeros({c, target_size, target_size});
    const float sy = static_cast<float>(h) / target_size;
    const float sx = static_cast<float>(w) / target_size;
    for (int oy = 0; oy < target_size; ++oy) {
        // half-pixel centers, clamped at the borders
        const float fy = std::clamp((oy + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const float wy = fy - y0;
        for (int ox = 0; ox < target_size; ++ox) {
            const float fx = std::clamp((ox + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const float wx = fx - x0;
            for (int cc = 0; cc < c; ++cc) {
                const float top = chw.at3(cc, y0, x0) * (1 - wx) + chw.at3(cc, y0, x1) * wx;
                const float bot = chw.at3(cc, y1, x0) * (1 - wx) + chw.at3(cc, y1, x1) * wx;
                out.at3(cc, oy, ox) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

namespace {

constexpr float kClassBase[3] = {0.40f, 0.50f, 0.60f};
constexpr float kClassFreq[3] = {3.0f, 6.0f, 9.0f};
// Grating orientation is a class trait too: three directions 60 degrees
// apart keep the classes from collapsing onto a single brightness axis.
constexpr float kClassTheta[3] = {0.0f, 1.0471976f, 2.0943951f};

Tensor synth_image(int image_size, int class_idx, SplitMix64 rng) {
    const double theta = kClassTheta[class_idx] + rng.uniform(-0.30, 0.30);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double amp = rng.uniform(0.16, 0.20);
    const double brightness = kClassBase[class_idx] + rng.normal(0.0, 0.02);
    // White noise on a coarse grid, upsampled: band-limited by construction.
    const int coarse = 8;
    Tensor field = Tensor::zeros({1, coarse, coarse});
    for (std::int64_t i = 0; i < field.size(); ++i)
        field.data[i] = static_cast<float>(rng.normal(0.0, 1.0));
    const Tensor noise = bilinear_resize(field, image_size);

    const double cth = std::cos(theta), sth = std::sin(theta);
    const double freq = kClassFreq[class_idx];
    Tensor img = Tensor::zeros({1, image_size, image_size});
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            const double t = (x * cth + y * sth) / image_size;
            const double v = brightness + amp * std::sin(2.0 * M_PI * freq * t + phase) +
                             0.14 * noise.at3(0, y, x);
            img.at3(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return img;
}

// One stream per image, derived from (seed, split, class, index) so the
// pixels do not depend on generation order.
SplitMix64 image_stream(std::uint64_t seed, int split_id, int class_idx, int index) {
    const std::uint64_t tag = (static_cast<std::uint64_t>(split_id) << 40) |
                              (static_cast<std::uint64_t>(class_idx) << 32) |
                              static_cast<std::uint64_t>(index);
    return SplitMix64(seed).fork(tag);
}

}  // namespace

std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> generate_synthetic_benchmark(
    const SplitConfig& cfg, int image_size) {
    cfg.check_invariants();
    if (image_size < 16)
        throw validation_error("benchmark image size must be >= 16, got " +
                               std::to_string(image_size));
    const auto labels = default_labels();
    std::vector<LabeledImage> train, test;
    train.reserve(static_cast<std::size_t>(cfg.per_class_train) * labels.size());
    test.reserve(static_cast<std::size_t>(cfg.per_class_test) * labels.size());
    for (const auto& label : labels) {
        for (int i = 0; i < cfg.per_class_train; ++i) {
            LabeledImage img;
            img.pixels = synth_image(image_size, label.index, image_stream(cfg.seed, 0, label.index, i));
            img.label = label;
            img.source_id = "syn:" + label.name + ":train:" + std::to_string(i);
            train.push_back(std::move(img));
        }
        for (int i = 0; i < cfg.per_class_test; ++i) {
            LabeledImage img;
            img.pixels = synth_image(image_size, label.index, image_stream(cfg.seed, 1, label.index, i));
            img.label = label;
            img.source_id = "syn:" + label.name + ":test:" + std::to_string(i);
            test.push_back(std::move(img));
        }
    }
    return {std::move(train), std::move(test)};
}

Tensor normalize_pixels(const Tensor& chw, const NormalizationStats& stats) {
    stats.check_invariants();
    if (chw.rank() != 3)
        throw validation_error("normalize expects [C,H,W], got " + shape_str(chw.shape));
    if (chw.dim(0) != stats.channels())
        throw validation_error("normalize: image has " + std::to_string(chw.dim(0)) +
                               " channels, stats cover " + std::to_string(stats.channels()));
    Tensor out = chw;
    const std::int64_t plane = static_cast<std::int64_t>(chw.dim(1)) * chw.dim(2);
    for (int c = 0; c < chw.dim(0); ++c)
        out.data.segment(c * plane, plane) =
            (chw.data.segment(c * plane, plane) - stats.mean[c]) / stats.stddev[c];
    return out;
}

Tensor normalize(const LabeledImage& img, const NormalizationStats& stats) {
    return normalize_pixels(img.pixels, stats);
}

Tensor denormalize(const Tensor& chw, const NormalizationStats& stats) {
    stats.check_invariants();
    if (chw.rank() != 3 || chw.dim(0) != stats.channels())
        throw validation_error("denormalize: shape " + shape_str(chw.shape) +
                               " does not match stats with " + std::to_string(stats.channels()) +
                               " channels");
    Tensor out = chw;
    const std::int64_t plane = static_cast<std::int64_t>(chw.dim(1)) * chw.dim(2);
    for (int c = 0; c < chw.dim(0); ++c)
        out.data.segment(c * plane, plane) =
            chw.data.segment(c * plane, plane) * stats.stddev[c] + stats.mean[c];
    return out;
}

std::vector<LabeledImage> stratified_sample(const std::vector<LabeledImage>& images, int per_class,
                                            std::uint64_t seed) {
    if (per_class < 1)
        throw validation_error("stratified_sample: per_class must be >= 1, got " +
                               std::to_string(per_class));
    std::map<int, std::vector<const LabeledImage*>> by_class;
    std::map<int, std::string> names;
    for (const auto& img : images) {
        by_class[img.label.index].push_back(&img);
        names[img.label.index] = img.label.name;
    }
    std::vector<LabeledImage> out;
    for (auto& [cls, group] : by_class) {
        if (static_cast<int>(group.size()) < per_class)
            throw validation_error("class '" + names[cls] + "' has " +
                                   std::to_string(group.size()) + " images, need " +
                                   std::to_string(per_class));
        // Sort, then shuffle with a per-class stream: the draw depends only
        // on the seed and the image ids, never on input order.
        std::sort(group.begin(), group.end(),
                  [](const LabeledImage* a, const LabeledImage* b) {
                      return a->source_id < b->source_id;
                  });
        SplitMix64 stream = SplitMix64(seed).fork(static_cast<std::uint64_t>(cls));
        shuffle(group, stream);
        for (int i = 0; i < per_class; ++i) out.push_back(*group[i]);
    }
    SplitMix64 order = SplitMix64(seed).fork(0xf005ba11ULL);
    shuffle(out, order);
    return out;
}

namespace {

// Replicates gray to RGB or reduces RGB to gray by Rec.601 luma.
Tensor match_channels(const Tensor& chw, int want) {
    const int have = chw.dim(0);
    if (have == want) return chw;
    const int h = chw.dim(1), w = chw.dim(2);
    if (have == 1 && want == 3) {
        Tensor out = Tensor::zeros({3, h, w});
        for (int c = 0; c < 3; ++c)
            out.data.segment(static_cast<std::int64_t>(c) * h * w, static_cast<std::int64_t>(h) * w) =
                chw.data;
        return out;
    }
    if (have == 3 && want == 1) {
        Tensor out = Tensor::zeros({1, h, w});
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        out.data = 0.299f * chw.data.segment(0, plane) + 0.587f * chw.data.segment(plane, plane) +
                   0.114f * chw.data.segment(2 * plane, plane);
        return out;
    }
    throw validation_error("cannot convert a " + std::to_string(have) + "-channel image to " +
                           std::to_string(want) + " channels");
}

LabeledImage decode_one(const std::string& path, const ClassLabel& label,
                        const NormalizationStats& stats, int target_size) {
    LabeledImage img;
    img.pixels = bilinear_resize(match_channels(read_image(path), stats.channels()), target_size);
    // resampling of in-range pixels can overshoot by an ulp; snap back
    img.pixels.data = img.pixels.data.cwiseMax(0.0f).cwiseMin(1.0f);
    img.label = label;
    img.source_id = path;
    img.check_invariants();
    return img;
}

}  // namespace

std::vector<LabeledImage> load_image_directory(const std::string& root_path,
                                               const std::vector<ClassLabel>& labels,
                                               const NormalizationStats& stats, int target_size,
                                               std::vector<std::string>* warnings) {
    stats.check_invariants();
    if (!fs::is_directory(root_path)) throw io_error("dataset root is not a directory: " + root_path);
    std::vector<LabeledImage> out;
    for (const auto& label : labels) {
        const fs::path dir = fs::path(root_path) / label.name;
        if (!fs::is_directory(dir))
            throw validation_error("class directory missing: " + dir.string());
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        std::size_t loaded = 0;
        for (const auto& file : files) {
            try {
                out.push_back(decode_one(file, label, stats, target_size));
                ++loaded;
            } catch (const io_error& e) {
                if (warnings) warnings->push_back(e.what());
            }
        }
        if (loaded == 0)
            throw validation_error("class directory has no readable images: " + dir.string());
    }
    return out;
}

std::vector<ManifestEntry> read_dataset_manifest(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw io_error("cannot open manifest " + json_path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("manifest " + json_path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw validation_error("manifest must be a JSON array: " + json_path);
    std::vector<ManifestEntry> entries;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("path") || !item.contains("label") ||
            !item.contains("split"))
            throw validation_error("manifest entries need path/label/split fields: " + json_path);
        ManifestEntry e;
        e.path = item["path"].get<std::string>();
        e.label = item["label"].get<std::string>();
        e.split = item["split"].get<std::string>();
        if (e.split != "train" && e.split != "test")
            throw validation_error("manifest split must be train or test, got '" + e.split + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<LabeledImage> load_manifest_split(const std::string& json_path,
                                              const std::vector<ClassLabel>& labels,
                                              const NormalizationStats& stats, int target_size,
                                              const std::string& split,
                                              std::vector<std::string>* warnings) {
    const auto entries = read_dataset_manifest(json_path);
    const fs::path base = fs::path(json_path).parent_path();
    std::vector<LabeledImage> out;
    for (const auto& e : entries) {
        if (e.split != split) continue;
        const ClassLabel& label = label_by_name(labels, e.label);
        const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
        try {
            out.push_back(decode_one(p.string(), label, stats, target_size));
        } catch (const io_error& err) {
            if (warnings) warnings->push_back(err.what());
        }
    }
    return out;
}

}  // namespace audit
