#include "ensembleseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ensembleseg/image_io.hpp"
#include "ensembleseg/rng.hpp"

namespace eseg {
namespace {

struct Blob {
    double cx, cy, rx, ry, cos_t, sin_t, peak;
};

// Elliptical radial profile: flat top to r = 0.6, cosine ramp down to 0.3
// at r = 1, zero outside. The small step at the support edge keeps the mask
// recoverable by thresholding while the interior edge stays soft.
double profile(double r) {
    if (r > 1.0) return 0.0;
    if (r <= 0.6) return 1.0;
    const double s = 0.5 * (1.0 + std::cos(3.14159265358979323846 * (r - 0.6) / 0.4));
    return 0.3 + 0.7 * s;
}

}  // namespace

std::vector<Sample> synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Sample> samples;
    samples.reserve(spec.count);
    const int size = spec.image_size;

    for (int i = 0; i < spec.count; ++i) {
        Rng rng(derive_seed(spec.seed, "synth-image", static_cast<std::uint64_t>(i)));

        char id[32];
        std::snprintf(id, sizeof(id), "synth_%05d", i);

        const double background = rng.uniform(0.10, 0.30);
        const int blob_count =
            spec.min_blobs + static_cast<int>(rng.below(spec.max_blobs - spec.min_blobs + 1));
        std::vector<Blob> blobs(blob_count);
        for (Blob& b : blobs) {
            b.cx = rng.uniform(0.18, 0.82) * size;
            b.cy = rng.uniform(0.18, 0.82) * size;
            b.rx = rng.uniform(0.08, 0.24) * size;
            b.ry = rng.uniform(0.08, 0.24) * size;
            const double theta = rng.uniform(0.0, 3.14159265358979323846);
            b.cos_t = std::cos(theta);
            b.sin_t = std::sin(theta);
            b.peak = spec.contrast * rng.uniform(0.55, 1.0);
        }

        Sample s;
        s.id = id;
        s.image.width = size;
        s.image.height = size;
        s.image.channels = 1;
        s.image.values.resize(s.image.pixel_count());
        Mask mask;
        mask.width = size;
        mask.height = size;
        mask.labels.assign(mask.pixel_count(), 0);

        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double value = 0.0;
                bool inside = false;
                for (const Blob& b : blobs) {
                    const double dx = px - b.cx, dy = py - b.cy;
                    const double u = (dx * b.cos_t + dy * b.sin_t) / b.rx;
                    const double v = (-dx * b.sin_t + dy * b.cos_t) / b.ry;
                    const double r = std::sqrt(u * u + v * v);
                    if (r <= 1.0) inside = true;
                    value = std::max(value, b.peak * profile(r));
                }
                const std::size_t j = static_cast<std::size_t>(y) * size + x;
                double intensity = background + value;
                if (spec.noise > 0.0) intensity += spec.noise * rng.normal();
                s.image.values[j] = static_cast<float>(std::clamp(intensity, 0.0, 1.0));
                mask.labels[j] = inside ? 1 : 0;
            }
        }
        s.mask = std::move(mask);
        samples.push_back(std::move(s));
    }
    return samples;
}

void synth_write(const std::filesystem::path& out_dir, const std::vector<Sample>& samples) {
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "masks");
    for (const Sample& s : samples) {
        save_image_png(out_dir / "images" / (s.id + ".png"), s.image);
        if (!s.mask) throw std::invalid_argument("synth_write: sample '" + s.id + "' has no mask");
        save_mask_png(out_dir / "masks" / (s.id + ".png"), *s.mask);
    }
}

}  // namespace eseg
