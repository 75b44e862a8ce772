#pragma once
// Desk-scale synthetic dataset: soft-edged elliptical blobs brighter than a
// varying background, plus additive Gaussian noise. Masks are the exact
// blob supports, so a per-image threshold recovers them perfectly at zero
// noise. Fully determined by the seed.

#include <filesystem>

#include "ensembleseg/types.hpp"

namespace eseg {

struct SyntheticSpec {
    int count = 260;
    int image_size = 64;
    int min_blobs = 1;
    int max_blobs = 3;
    double contrast = 0.6;  // scale of blob peak intensity above background
    double noise = 0.25;    // additive Gaussian sigma
    std::uint64_t seed = 0;

    void validate() const {
        if (count < 0) throw std::invalid_argument("synth: count must be >= 0");
        if (image_size < 8) throw std::invalid_argument("synth: image_size must be >= 8");
        if (min_blobs < 1 || max_blobs < min_blobs) {
            throw std::invalid_argument("synth: blob count range is invalid");
        }
        if (!(contrast > 0.0)) throw std::invalid_argument("synth: contrast must be > 0");
        if (noise < 0.0) throw std::invalid_argument("synth: noise must be >= 0");
    }
};

// Grayscale image/mask pairs with ids "synth_00000"... Every mask is
// non-empty.
std::vector<Sample> synth_generate(const SyntheticSpec& spec);

// Writes <out_dir>/images/<id>.png and <out_dir>/masks/<id>.png.
void synth_write(const std::filesystem::path& out_dir, const std::vector<Sample>& samples);

}  // namespace eseg
