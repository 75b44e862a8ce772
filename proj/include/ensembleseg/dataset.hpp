#pragma once
// Dataset ingestion, preprocessing and split construction. Images are
// resized bilinearly and zero-mean/unit-std normalized per channel; masks
// are resized with nearest-neighbor so labels stay in {0,1}. Ground-truth
// masks of unlabeled samples are quarantined into a separate store so
// training code cannot touch them.

#include <filesystem>
#include <map>

#include "ensembleseg/types.hpp"

namespace eseg {

struct SplitSpec {
    double test_fraction = 500.0 / 2594.0;
    int labeled_count = 100;
    int validation_count = 50;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
            throw std::invalid_argument("split: test_fraction must lie in (0,1)");
        }
        if (labeled_count < 1 || validation_count < 0) {
            throw std::invalid_argument("split: counts must be positive");
        }
    }
};

struct DatasetSplit {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;  // masks withheld
    std::vector<Sample> validation;
    std::vector<Sample> test;
    // Ground truth of the unlabeled set, for evaluation/diagnostics only.
    std::map<std::string, Mask> withheld_masks;
};

struct PreprocessResult {
    RasterImage image;
    std::optional<Mask> mask;
    bool constant_channel = false;  // std floor was applied to some channel
};

// One Sample per image/mask pair, ids from file stems, deterministic
// lexicographic order. Throws IoError listing unmatched stems or on an
// empty directory.
std::vector<Sample> load_dataset(const std::filesystem::path& image_dir,
                                 const std::filesystem::path& mask_dir);

// Bilinear resize to target_size x target_size, then per-channel zero-mean
// unit-std normalization (std floored at 1e-8 for constant channels); the
// mask is resized with nearest-neighbor.
PreprocessResult preprocess(const RasterImage& image, const std::optional<Mask>& mask,
                            int target_size);

// Seeded uniform shuffle into a disjoint, exhaustive partition with exact
// requested counts: test first, then labeled, then validation, remainder
// unlabeled.
DatasetSplit split(std::vector<Sample> samples, const SplitSpec& spec);

}  // namespace eseg
