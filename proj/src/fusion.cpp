#include "ensembleseg/fusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace eseg {
namespace {

void require_compatible(const std::vector<ProbMap>& maps) {
    if (maps.empty()) throw std::invalid_argument("fusion: need at least one probability map");
    const ProbMap& first = maps.front();
    for (const ProbMap& m : maps) {
        if (m.width != first.width || m.height != first.height || m.classes != first.classes) {
            throw std::invalid_argument("fusion: probability map dimensions disagree");
        }
    }
}

}  // namespace

ConsensusMap consensus(const std::vector<ProbMap>& maps, int foreground_class) {
    require_compatible(maps);
    if (foreground_class < 0 || foreground_class >= maps.front().classes) {
        throw std::invalid_argument("consensus: foreground class out of range");
    }
    ConsensusMap out;
    out.width = maps.front().width;
    out.height = maps.front().height;
    const std::size_t n = maps.front().pixel_count();
    const int classes = maps.front().classes;
    out.sums.assign(n, 0.0);
    for (const ProbMap& m : maps) {
        for (std::size_t j = 0; j < n; ++j) {
            out.sums[j] += m.probs[j * classes + foreground_class];
        }
    }
    return out;
}

WeightVector raw_weights(const std::vector<ProbMap>& maps, int foreground_class,
                         double threshold) {
    const ConsensusMap c = consensus(maps, foreground_class);
    const std::size_t n = maps.front().pixel_count();
    WeightVector w;
    w.values.reserve(maps.size());
    for (const ProbMap& m : maps) {
        const BinaryMap b = binarize(m, foreground_class, threshold);
        double wi = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (b.bits[j]) wi += c.sums[j];
        }
        w.values.push_back(wi);
    }
    return w;
}

WeightVector rescale_weights(const WeightVector& w) {
    if (w.values.empty()) throw std::invalid_argument("rescale_weights: empty weight vector");
    const auto [mn_it, mx_it] = std::minmax_element(w.values.begin(), w.values.end());
    const double mn = *mn_it, mx = *mx_it;
    WeightVector out;
    out.values.resize(w.values.size());
    if (mx == mn) {
        std::fill(out.values.begin(), out.values.end(), 1.0);
        return out;
    }
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        out.values[i] = (w.values[i] - mn) / (mx - mn) * 0.9 + 0.1;
    }
    return out;
}

WeightVector normalize_weights(const WeightVector& w) {
    if (w.values.empty()) throw std::invalid_argument("normalize_weights: empty weight vector");
    double sum = 0.0;
    for (double v : w.values) {
        if (!(v > 0.0)) {
            throw std::invalid_argument("normalize_weights: entries must be strictly positive");
        }
        sum += v;
    }
    WeightVector out;
    out.values.resize(w.values.size());
    for (std::size_t i = 0; i < w.values.size(); ++i) out.values[i] = w.values[i] / sum;
    return out;
}

PseudoLabel fuse(const std::vector<ProbMap>& maps, const WeightVector& w, int source_level) {
    require_compatible(maps);
    if (maps.size() != w.size()) {
        throw std::invalid_argument("fuse: map count and weight count disagree");
    }
    double sum = 0.0;
    for (double v : w.values) sum += v;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("fuse: weights are not normalized");
    }

    PseudoLabel out;
    out.source_level = source_level;
    out.weights_used = w;
    out.map.width = maps.front().width;
    out.map.height = maps.front().height;
    out.map.classes = maps.front().classes;
    out.map.probs.assign(out.map.pixel_count() * out.map.classes, 0.0);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const double wi = w.values[i];
        const std::vector<double>& src = maps[i].probs;
        for (std::size_t j = 0; j < out.map.probs.size(); ++j) {
            out.map.probs[j] += wi * src[j];
        }
    }
    return out;
}

PseudoLabel fuse_ensemble(const std::vector<ProbMap>& maps, int foreground_class,
                          double threshold, int source_level) {
    const WeightVector w =
        normalize_weights(rescale_weights(raw_weights(maps, foreground_class, threshold)));
    return fuse(maps, w, source_level);
}

std::vector<PseudoLabel> generate_pseudo_labels(const std::vector<Segmenter>& models,
                                                const std::vector<Sample>& unlabeled,
                                                int foreground_class, double threshold,
                                                int source_level, int workers) {
    if (models.empty()) throw std::invalid_argument("generate_pseudo_labels: no models given");
    std::vector<PseudoLabel> out(unlabeled.size());

    auto process = [&](std::size_t k) {
        const Sample& sample = unlabeled[k];
        try {
            std::vector<ProbMap> maps;
            maps.reserve(models.size());
            for (const Segmenter& model : models) maps.push_back(model(sample.image));
            out[k] = fuse_ensemble(maps, foreground_class, threshold, source_level);
        } catch (const std::exception& e) {
            throw std::runtime_error("pseudo-label generation failed for sample '" + sample.id +
                                     "': " + e.what());
        }
    };

    if (workers <= 1 || unlabeled.size() <= 1) {
        for (std::size_t k = 0; k < unlabeled.size(); ++k) process(k);
        return out;
    }

    // Images are independent; results land in preassigned slots so the
    // outcome does not depend on scheduling.
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= unlabeled.size()) return;
            try {
                process(k);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<std::size_t>(workers, unlabeled.size());
    pool.reserve(count);
    for (int i = 0; i < count; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

}  // namespace eseg
