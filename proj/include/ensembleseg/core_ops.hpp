#pragma once
// Elementary probability-map operations shared by fusion, metrics and the
// pipeline. Pure functions, safe to call concurrently.

#include "ensembleseg/types.hpp"

namespace eseg {

// Result of validate_probmap: ok, or the first violating pixel with a reason.
struct ProbMapCheck {
    bool ok = true;
    int pixel = -1;  // flat index y*width + x of the first violation
    std::string reason;
};

// Threshold the foreground channel of a probability map. A probability
// exactly equal to the threshold maps to foreground (>= convention).
// Throws std::invalid_argument for an out-of-range class or threshold.
BinaryMap binarize(const ProbMap& map, int foreground_class, double threshold);

// Checks both ProbMap invariants: every entry in [0,1] and per-pixel class
// probabilities summing to 1 within kProbSumTolerance. Diagnostic only,
// never throws.
ProbMapCheck validate_probmap(const ProbMap& map);

}  // namespace eseg
