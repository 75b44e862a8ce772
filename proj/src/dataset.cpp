#include "ensembleseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ensembleseg/image_io.hpp"
#include "ensembleseg/rng.hpp"

namespace eseg {
namespace {

bool is_image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

RasterImage resize_bilinear(const RasterImage& src, int target) {
    if (src.width == target && src.height == target) return src;
    RasterImage dst;
    dst.width = target;
    dst.height = target;
    dst.channels = src.channels;
    dst.values.resize(dst.pixel_count() * dst.channels);
    const double sx = double(src.width) / target;
    const double sy = double(src.height) / target;
    const std::size_t splane = src.pixel_count();
    const std::size_t dplane = dst.pixel_count();
    for (int y = 0; y < target; ++y) {
        // half-pixel-center mapping
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const float* plane = src.values.data() + c * splane;
                const double top = plane[y0 * src.width + x0] * (1.0 - wx) +
                                   plane[y0 * src.width + x1] * wx;
                const double bot = plane[y1 * src.width + x0] * (1.0 - wx) +
                                   plane[y1 * src.width + x1] * wx;
                dst.values[c * dplane + static_cast<std::size_t>(y) * target + x] =
                    static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return dst;
}

Mask resize_nearest(const Mask& src, int target) {
    if (src.width == target && src.height == target) return src;
    Mask dst;
    dst.width = target;
    dst.height = target;
    dst.labels.resize(dst.pixel_count());
    const double sx = double(src.width) / target;
    const double sy = double(src.height) / target;
    for (int y = 0; y < target; ++y) {
        const int sy0 = std::min(src.height - 1, static_cast<int>((y + 0.5) * sy));
        for (int x = 0; x < target; ++x) {
            const int sx0 = std::min(src.width - 1, static_cast<int>((x + 0.5) * sx));
            dst.labels[static_cast<std::size_t>(y) * target + x] =
                src.labels[static_cast<std::size_t>(sy0) * src.width + sx0];
        }
    }
    return dst;
}

}  // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& image_dir,
                                 const std::filesystem::path& mask_dir) {
    if (!std::filesystem::is_directory(image_dir)) {
        throw IoError("image directory does not exist: " + image_dir.string());
    }
    if (!std::filesystem::is_directory(mask_dir)) {
        throw IoError("mask directory does not exist: " + mask_dir.string());
    }
    std::vector<std::filesystem::path> image_files;
    for (const auto& entry : std::filesystem::directory_iterator(image_dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            image_files.push_back(entry.path());
        }
    }
    if (image_files.empty()) {
        throw IoError("no PNG/JPEG images found in " + image_dir.string());
    }
    std::sort(image_files.begin(), image_files.end(),
              [](const auto& a, const auto& b) { return a.stem() < b.stem(); });

    std::set<std::string> seen;
    std::vector<std::string> unmatched;
    std::vector<Sample> samples;
    samples.reserve(image_files.size());
    for (const auto& file : image_files) {
        const std::string stem = file.stem().string();
        if (!seen.insert(stem).second) {
            throw IoError("duplicate image stem '" + stem + "' in " + image_dir.string());
        }
        const std::filesystem::path mask_path = mask_dir / (stem + ".png");
        if (!std::filesystem::exists(mask_path)) {
            unmatched.push_back(stem);
            continue;
        }
        Sample s;
        s.id = stem;
        s.image = load_image(file);
        s.mask = load_mask(mask_path);
        if (s.mask->width != s.image.width || s.mask->height != s.image.height) {
            throw IoError("mask dimensions disagree with image for '" + stem + "'");
        }
        samples.push_back(std::move(s));
    }
    if (!unmatched.empty()) {
        std::string msg = "images without masks:";
        for (const std::string& stem : unmatched) msg += " " + stem;
        throw IoError(msg);
    }
    return samples;
}

PreprocessResult preprocess(const RasterImage& image, const std::optional<Mask>& mask,
                            int target_size) {
    if (!image.valid()) throw std::invalid_argument("preprocess: malformed image");
    if (target_size < 1) throw std::invalid_argument("preprocess: target size must be positive");

    PreprocessResult out;
    out.image = resize_bilinear(image, target_size);

    const std::size_t plane = out.image.pixel_count();
    for (int c = 0; c < out.image.channels; ++c) {
        float* values = out.image.values.data() + c * plane;
        double mean = 0.0;
        for (std::size_t j = 0; j < plane; ++j) mean += values[j];
        mean /= double(plane);
        double var = 0.0;
        for (std::size_t j = 0; j < plane; ++j) {
            const double d = values[j] - mean;
            var += d * d;
        }
        double stddev = std::sqrt(var / double(plane));
        if (stddev < 1e-8) {
            stddev = 1e-8;
            out.constant_channel = true;
        }
        for (std::size_t j = 0; j < plane; ++j) {
            values[j] = static_cast<float>((values[j] - mean) / stddev);
        }
    }

    if (mask) {
        if (mask->width != image.width || mask->height != image.height) {
            throw std::invalid_argument("preprocess: mask dimensions disagree with image");
        }
        out.mask = resize_nearest(*mask, target_size);
    }
    return out;
}

DatasetSplit split(std::vector<Sample> samples, const SplitSpec& spec) {
    spec.validate();
    const std::size_t total = samples.size();
    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(spec.test_fraction * double(total)));
    const std::size_t needed =
        n_test + static_cast<std::size_t>(spec.labeled_count) +
        static_cast<std::size_t>(spec.validation_count);
    if (needed > total) {
        throw std::invalid_argument(
            "split: need " + std::to_string(needed) + " samples (test " + std::to_string(n_test) +
            " + labeled " + std::to_string(spec.labeled_count) + " + validation " +
            std::to_string(spec.validation_count) + ") but only " + std::to_string(total) +
            " are available");
    }

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(spec.seed);
    rng.shuffle(order);

    DatasetSplit out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_test; ++i) out.test.push_back(std::move(samples[order[pos++]]));
    for (int i = 0; i < spec.labeled_count; ++i) {
        out.labeled.push_back(std::move(samples[order[pos++]]));
    }
    for (int i = 0; i < spec.validation_count; ++i) {
        out.validation.push_back(std::move(samples[order[pos++]]));
    }
    while (pos < total) {
        Sample s = std::move(samples[order[pos++]]);
        if (s.mask) {
            out.withheld_masks.emplace(s.id, std::move(*s.mask));
            s.mask.reset();
        }
        out.unlabeled.push_back(std::move(s));
    }
    return out;
}

}  // namespace eseg
