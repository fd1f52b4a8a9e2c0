#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "auditkit/tensor.hpp"

namespace audit {

struct ClassLabel {
    int index = 0;
    std::string name;

    bool operator==(const ClassLabel&) const = default;
};

// The audit's default three-way diagnosis task.
std::vector<ClassLabel> default_labels();

// Indexed lookup with validation in both directions.
const ClassLabel& label_by_index(const std::vector<ClassLabel>& labels, int index);
const ClassLabel& label_by_name(const std::vector<ClassLabel>& labels, const std::string& name);

// One image in pixel space: values in [0,1], shape [C,H,W].
struct LabeledImage {
    Tensor pixels;
    ClassLabel label;
    std::string source_id;

    void check_invariants() const;
};

struct NormalizationStats {
    std::vector<float> mean;
    std::vector<float> stddev;

    static NormalizationStats imagenet();   // 3-channel CX-R convention
    static NormalizationStats grayscale();  // mean 0.5, std 0.5

    int channels() const { return static_cast<int>(mean.size()); }
    void check_invariants() const;
};

struct SplitConfig {
    int per_class_train = 200;
    int per_class_test = 50;
    std::uint64_t seed = 42;

    void check_invariants() const;
};

// Deterministic procedural benchmark: each class pairs a base brightness
// with a dominant texture frequency, plus enough jitter and band-limited
// noise that classification is learnable but not trivial. Disjoint
// train/test by construction.
std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> generate_synthetic_benchmark(
    const SplitConfig& cfg, int image_size = 32);

// Bilinear resampling with half-pixel centers; [C,H,W] -> [C,t,t].
Tensor bilinear_resize(const Tensor& chw, int target_size);

// Per-channel standardization and its exact inverse.
Tensor normalize(const LabeledImage& img, const NormalizationStats& stats);
Tensor normalize_pixels(const Tensor& chw, const NormalizationStats& stats);
Tensor denormalize(const Tensor& chw, const NormalizationStats& stats);

// Draws exactly per_class images per label, deterministically: groups are
// sorted by source_id first, so the draw is independent of input order.
std::vector<LabeledImage> stratified_sample(const std::vector<LabeledImage>& images, int per_class,
                                            std::uint64_t seed);

// Loads root/<class name>/* for every label. Decoded to [0,1], resized,
// channel count matched to stats (gray replicated to RGB, RGB reduced by
// luma). Unreadable files are skipped and recorded in `warnings`.
std::vector<LabeledImage> load_image_directory(const std::string& root_path,
                                               const std::vector<ClassLabel>& labels,
                                               const NormalizationStats& stats, int target_size,
                                               std::vector<std::string>* warnings = nullptr);

struct ManifestEntry {
    std::string path;
    std::string label;
    std::string split;  // "train" or "test"
};

std::vector<ManifestEntry> read_dataset_manifest(const std::string& json_path);

// Materializes one split of a manifest; paths resolve relative to the
// manifest's directory.
std::vector<LabeledImage> load_manifest_split(const std::string& json_path,
                                              const std::vector<ClassLabel>& labels,
                                              const NormalizationStats& stats, int target_size,
                                              const std::string& split,
                                              std::vector<std::string>* warnings = nullptr);

}  // namespace audit
