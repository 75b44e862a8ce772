#include "ensembleseg/core_ops.hpp"

#include <cmath>
#include <cstdio>

namespace eseg {

BinaryMap binarize(const ProbMap& map, int foreground_class, double threshold) {
    if (foreground_class < 0 || foreground_class >= map.classes) {
        throw std::invalid_argument("binarize: foreground class " +
                                    std::to_string(foreground_class) + " out of range [0, " +
                                    std::to_string(map.classes) + ")");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("binarize: threshold must lie strictly inside (0, 1)");
    }
    if (map.width <= 0 || map.height <= 0 ||
        map.probs.size() != map.pixel_count() * map.classes) {
        throw std::invalid_argument("binarize: malformed probability map");
    }
    BinaryMap out;
    out.width = map.width;
    out.height = map.height;
    out.bits.resize(map.pixel_count());
    const std::size_t n = map.pixel_count();
    for (std::size_t j = 0; j < n; ++j) {
        out.bits[j] = map.probs[j * map.classes + foreground_class] >= threshold ? 1 : 0;
    }
    return out;
}

ProbMapCheck validate_probmap(const ProbMap& map) {
    ProbMapCheck check;
    if (map.width <= 0 || map.height <= 0 || map.classes < 2 ||
        map.probs.size() != map.pixel_count() * map.classes) {
        check.ok = false;
        check.pixel = -1;
        check.reason = "malformed dimensions or entry count";
        return check;
    }
    const std::size_t n = map.pixel_count();
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (int c = 0; c < map.classes; ++c) {
            const double p = map.probs[j * map.classes + c];
            if (!(p >= 0.0 && p <= 1.0)) {
                check.ok = false;
                check.pixel = static_cast<int>(j);
                check.reason = "probability " + std::to_string(p) + " outside [0,1] for class " +
                               std::to_string(c);
                return check;
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kProbSumTolerance) {
            check.ok = false;
            check.pixel = static_cast<int>(j);
            check.reason = "class probabilities sum to " + std::to_string(sum);
            return check;
        }
    }
    return check;
}

}  // namespace eseg
