#pragma once
// Shared domain types. All of these are plain immutable-by-convention value
// types; operations over them are pure functions (see core_ops.hpp).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eseg {

// Per-pixel probability tolerance when checking that class probabilities
// sum to one (absorbs float32 softmax error).
inline constexpr double kProbSumTolerance = 1e-5;

// Real-valued intensity grid, channel-planar layout [c][y][x].
// Values are unbounded after zero-mean normalization.
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> values;

    float at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool valid() const {
        return width > 0 && height > 0 && (channels == 1 || channels == 3) &&
               values.size() == pixel_count() * channels;
    }
};

// Binary ground-truth labels, row-major, entries in {0,1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Pixel-wise class-probability map, row-major and class-minor:
// probs[(y*width + x)*classes + c]. This matches the .pmap container layout.
struct ProbMap {
    int width = 0;
    int height = 0;
    int classes = 2;
    std::vector<double> probs;

    double at(int y, int x, int c) const {
        return probs[(static_cast<std::size_t>(y) * width + x) * classes + c];
    }
    double& at(int y, int x, int c) {
        return probs[(static_cast<std::size_t>(y) * width + x) * classes + c];
    }
    // R in the weight formula: total pixels per image.
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Thresholded foreground prediction, entries in {0,1}.
struct BinaryMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
};

// Per-pixel sum of foreground probabilities over an ensemble; entries lie
// in [0, S] for S summed maps.
struct ConsensusMap {
    int width = 0;
    int height = 0;
    std::vector<double> sums;

    double at(int y, int x) const { return sums[static_cast<std::size_t>(y) * width + x]; }
    double& at(int y, int x) { return sums[static_cast<std::size_t>(y) * width + x]; }
};

// One dataset element. At most one of {mask, pseudo} drives training targets:
// labeled samples carry a mask, unlabeled samples gain a pseudo label once
// the pipeline has produced one.
struct Sample {
    std::string id;
    RasterImage image;
    std::optional<Mask> mask;
    std::optional<ProbMap> pseudo;
};

// File/container read or write failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a training run produces a non-finite loss.
struct TrainingDivergenceError : std::runtime_error {
    int epoch;
    explicit TrainingDivergenceError(int epoch_idx, const std::string& what)
        : std::runtime_error(what), epoch(epoch_idx) {}
};

// Thrown when a checkpoint fails its integrity checks on load.
struct CheckpointIntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace eseg
