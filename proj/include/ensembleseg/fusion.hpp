#pragma once
// Ensemble pseudo-label generation. For each unlabeled image the sub-model
// outputs are combined in four steps:
//   1. consensus      — per-pixel sum of foreground probabilities
//   2. raw_weights    — per sub-model, sum of consensus values over the
//                       pixels that sub-model predicts as foreground
//   3. rescale_weights — affine map of the weight vector onto [0.1, 1]
//   4. normalize_weights + fuse — convex combination of the probability maps
//
// Weights are computed independently per image; all arithmetic is double.

#include <functional>
#include <vector>

#include "ensembleseg/core_ops.hpp"
#include "ensembleseg/types.hpp"

namespace eseg {

// Nonnegative per-sub-model weights, ordered by sub-model index.
struct WeightVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

// A fused probability map plus the weights that produced it.
struct PseudoLabel {
    ProbMap map;
    int source_level = -1;
    WeightVector weights_used;
};

// Pixel-wise segmentation model interface used for pseudo-label generation.
// Implementations must be safe to call concurrently (the backbone's predict
// is reentrant).
using Segmenter = std::function<ProbMap(const RasterImage&)>;

// Per-pixel sum of foreground probabilities across all maps.
ConsensusMap consensus(const std::vector<ProbMap>& maps, int foreground_class);

// w_i = sum_j B_i^j * C^j with B_i the thresholded map of sub-model i and C
// the consensus of all maps.
WeightVector raw_weights(const std::vector<ProbMap>& maps, int foreground_class,
                         double threshold);

// w_i <- (w_i - min) / (max - min) * 0.9 + 0.1. When max == min (identical
// agreement, or a single sub-model) every entry becomes 1.0.
WeightVector rescale_weights(const WeightVector& w);

// Divide by the sum; requires strictly positive entries.
WeightVector normalize_weights(const WeightVector& w);

// Per-pixel, per-class convex combination of the maps under normalized
// weights. The weights are applied to every class channel.
PseudoLabel fuse(const std::vector<ProbMap>& maps, const WeightVector& w,
                 int source_level = -1);

// raw -> rescale -> normalize -> fuse for one image's sub-model outputs.
PseudoLabel fuse_ensemble(const std::vector<ProbMap>& maps, int foreground_class,
                          double threshold, int source_level = -1);

// Runs every model on every unlabeled sample and fuses the outputs with
// per-image weights. Order of the result matches the sample order. Model
// inference failures are rethrown with the sample id attached.
std::vector<PseudoLabel> generate_pseudo_labels(const std::vector<Segmenter>& models,
                                                const std::vector<Sample>& unlabeled,
                                                int foreground_class, double threshold,
                                                int source_level = -1, int workers = 1);

}  // namespace eseg
