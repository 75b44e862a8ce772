#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "ensembleseg/dataset.hpp"
#include "ensembleseg/image_io.hpp"
#include "ensembleseg/synthetic.hpp"
#include "support/test_util.hpp"

using namespace eseg;
using eseg::test::TempDir;

namespace {

RasterImage gray_image(int w, int h, float value) {
    RasterImage img;
    img.width = w;
    img.height = h;
    img.channels = 1;
    img.values.assign(static_cast<std::size_t>(w) * h, value);
    return img;
}

Mask empty_mask(int w, int h) {
    Mask m;
    m.width = w;
    m.height = h;
    m.labels.assign(static_cast<std::size_t>(w) * h, 0);
    return m;
}

}  // namespace

TEST_CASE("load_dataset pairs images with masks in stem order") {
    TempDir tmp("load");
    std::filesystem::create_directories(tmp.path / "images");
    std::filesystem::create_directories(tmp.path / "masks");
    for (const std::string stem : {"charlie", "alpha", "bravo"}) {
        save_image_png(tmp.path / "images" / (stem + ".png"), gray_image(4, 4, 0.5f));
        save_mask_png(tmp.path / "masks" / (stem + ".png"), empty_mask(4, 4));
    }
    const std::vector<Sample> samples = load_dataset(tmp.path / "images", tmp.path / "masks");
    REQUIRE(samples.size() == 3);
    CHECK(samples[0].id == "alpha");
    CHECK(samples[1].id == "bravo");
    CHECK(samples[2].id == "charlie");
    CHECK(samples[0].mask.has_value());
}

TEST_CASE("load_dataset reports unmatched stems and empty directories") {
    TempDir tmp("load_err");
    std::filesystem::create_directories(tmp.path / "images");
    std::filesystem::create_directories(tmp.path / "masks");
    save_image_png(tmp.path / "images" / "a.png", gray_image(4, 4, 0.5f));
    save_image_png(tmp.path / "images" / "b.png", gray_image(4, 4, 0.5f));
    save_mask_png(tmp.path / "masks" / "a.png", empty_mask(4, 4));
    CHECK_THROWS_WITH_AS(load_dataset(tmp.path / "images", tmp.path / "masks"),
                         doctest::Contains("b"), IoError);

    TempDir empty("load_empty");
    std::filesystem::create_directories(empty.path / "images");
    std::filesystem::create_directories(empty.path / "masks");
    CHECK_THROWS_AS(load_dataset(empty.path / "images", empty.path / "masks"), IoError);
}

TEST_CASE("preprocess normalizes to zero mean and unit std") {
    // constant-plus-step image
    RasterImage img = gray_image(8, 8, 0.25f);
    for (int x = 0; x < 8; ++x) img.at(0, 0, x) = 0.75f;
    const PreprocessResult pre = preprocess(img, std::nullopt, 8);
    double mean = 0.0;
    for (float v : pre.image.values) mean += v;
    mean /= 64.0;
    double var = 0.0;
    for (float v : pre.image.values) var += (v - mean) * (v - mean);
    const double stddev = std::sqrt(var / 64.0);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(stddev == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("preprocess is idempotent on its own output") {
    SyntheticSpec spec;
    spec.count = 1;
    spec.image_size = 32;
    spec.seed = 5;
    const Sample s = synth_generate(spec)[0];
    const PreprocessResult once = preprocess(s.image, s.mask, 32);
    const PreprocessResult twice = preprocess(once.image, once.mask, 32);
    for (std::size_t j = 0; j < once.image.values.size(); ++j) {
        CHECK(std::abs(once.image.values[j] - twice.image.values[j]) < 1e-5);
    }
    CHECK(once.mask->labels == twice.mask->labels);
}

TEST_CASE("mask downscale keeps exact binary values and geometry") {
    Mask big = empty_mask(256, 256);
    for (int y = 64; y < 192; ++y) {
        for (int x = 64; x < 192; ++x) big.at(y, x) = 1;
    }
    RasterImage img = gray_image(256, 256, 0.5f);
    img.at(0, 10, 10) = 1.0f;  // avoid zero variance
    const PreprocessResult pre = preprocess(img, big, 128);
    REQUIRE(pre.mask.has_value());
    const Mask& small = *pre.mask;
    std::int64_t fg = 0;
    for (std::uint8_t v : small.labels) {
        CHECK((v == 0 || v == 1));
        fg += v;
    }
    CHECK(fg == 64 * 64);
    // centered square: rows 32..95 inclusive
    CHECK(small.at(31, 64) == 0);
    CHECK(small.at(32, 64) == 1);
    CHECK(small.at(95, 64) == 1);
    CHECK(small.at(96, 64) == 0);
    CHECK(small.at(64, 31) == 0);
    CHECK(small.at(64, 32) == 1);
}

TEST_CASE("constant images normalize through the std floor") {
    const RasterImage img = gray_image(8, 8, 0.5f);
    const PreprocessResult pre = preprocess(img, std::nullopt, 8);
    CHECK(pre.constant_channel);
    for (float v : pre.image.values) CHECK(std::isfinite(v));
}

TEST_CASE("split produces the reference partition sizes") {
    std::vector<Sample> samples(2594);
    for (int i = 0; i < 2594; ++i) {
        samples[i].id = "s" + std::to_string(i);
        samples[i].image = gray_image(1, 1, 0.0f);
        samples[i].mask = empty_mask(1, 1);
    }
    SplitSpec spec;  // defaults: 500/2594 test, 100 labeled, 50 validation
    spec.seed = 3;
    const DatasetSplit s = split(samples, spec);
    CHECK(s.test.size() == 500);
    CHECK(s.labeled.size() == 100);
    CHECK(s.validation.size() == 50);
    CHECK(s.unlabeled.size() == 1944);
    CHECK(s.withheld_masks.size() == 1944);
    for (const Sample& u : s.unlabeled) CHECK_FALSE(u.mask.has_value());
}

TEST_CASE("split is deterministic and exhaustive") {
    auto make = [](int n) {
        std::vector<Sample> v(n);
        for (int i = 0; i < n; ++i) {
            v[i].id = "x" + std::to_string(i);
            v[i].image = gray_image(1, 1, 0.0f);
            v[i].mask = empty_mask(1, 1);
        }
        return v;
    };
    SplitSpec spec;
    spec.test_fraction = 0.2;
    spec.labeled_count = 10;
    spec.validation_count = 5;
    spec.seed = 77;

    const DatasetSplit a = split(make(100), spec);
    const DatasetSplit b = split(make(100), spec);
    auto ids = [](const std::vector<Sample>& v) {
        std::vector<std::string> out;
        for (const Sample& s : v) out.push_back(s.id);
        return out;
    };
    CHECK(ids(a.test) == ids(b.test));
    CHECK(ids(a.labeled) == ids(b.labeled));
    CHECK(ids(a.validation) == ids(b.validation));
    CHECK(ids(a.unlabeled) == ids(b.unlabeled));

    // disjoint and exhaustive
    std::set<std::string> all;
    for (const auto* part : {&a.test, &a.labeled, &a.validation, &a.unlabeled}) {
        for (const Sample& s : *part) CHECK(all.insert(s.id).second);
    }
    CHECK(all.size() == 100);
}

TEST_CASE("split rejects unsatisfiable counts") {
    std::vector<Sample> ten(10);
    for (int i = 0; i < 10; ++i) {
        ten[i].id = std::to_string(i);
        ten[i].image = gray_image(1, 1, 0.0f);
    }
    SplitSpec spec;
    spec.test_fraction = 0.2;
    spec.labeled_count = 20;
    spec.validation_count = 0;
    CHECK_THROWS_WITH_AS(split(ten, spec), doctest::Contains("available"),
                         std::invalid_argument);
}

TEST_CASE("synthetic generator honors its contract") {
    SyntheticSpec spec;
    spec.count = 10;
    spec.image_size = 32;
    spec.seed = 11;
    const std::vector<Sample> samples = synth_generate(spec);
    REQUIRE(samples.size() == 10);
    for (const Sample& s : samples) {
        REQUIRE(s.mask.has_value());
        std::int64_t fg = 0;
        for (std::uint8_t v : s.mask->labels) fg += v;
        CHECK(fg > 0);  // every mask non-empty
        CHECK(s.image.channels == 1);
        CHECK(s.image.width == 32);
    }
}

TEST_CASE("zero-noise high-contrast blobs are recoverable by thresholding") {
    SyntheticSpec spec;
    spec.count = 20;
    spec.image_size = 64;
    spec.contrast = 0.7;
    spec.noise = 0.0;
    spec.seed = 13;
    const std::vector<Sample> samples = synth_generate(spec);
    for (const Sample& s : samples) {
        float lo = 1.0f, hi = 0.0f;
        for (float v : s.image.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const float threshold = lo + 0.12f * (hi - lo);
        std::int64_t inter = 0, pred = 0, truth = 0;
        for (std::size_t j = 0; j < s.image.values.size(); ++j) {
            const bool p = s.image.values[j] > threshold;
            const bool g = s.mask->labels[j] != 0;
            inter += (p && g);
            pred += p;
            truth += g;
        }
        const double dice = 2.0 * double(inter) / double(pred + truth);
        CHECK(dice > 0.99);
    }
}

TEST_CASE("synthetic datasets are seed-deterministic down to the bytes") {
    SyntheticSpec spec;
    spec.count = 5;
    spec.image_size = 32;
    spec.seed = 21;
    TempDir a("synth_a"), b("synth_b");
    synth_write(a.path, synth_generate(spec));
    synth_write(b.path, synth_generate(spec));
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a.path);
        CHECK(eseg::test::read_file_bytes(entry.path()) ==
              eseg::test::read_file_bytes(b.path / rel));
    }
}
