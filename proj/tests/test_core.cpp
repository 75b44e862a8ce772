#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ensembleseg/core_ops.hpp"
#include "ensembleseg/image_io.hpp"
#include "ensembleseg/rng.hpp"
#include "support/test_util.hpp"

using namespace eseg;
using eseg::test::probmap_from_fg;

TEST_CASE("binarize thresholds the foreground channel with >= ties") {
    const ProbMap map = probmap_from_fg(2, 1, {0.9, 0.2});
    const BinaryMap b = binarize(map, 1, 0.5);
    CHECK(b.bits == std::vector<std::uint8_t>{1, 0});

    const ProbMap zeros = probmap_from_fg(3, 1, {0.0, 0.0, 0.0});
    const BinaryMap bz = binarize(zeros, 1, 0.5);
    CHECK(bz.bits == std::vector<std::uint8_t>{0, 0, 0});

    // tie at the threshold maps to foreground
    const ProbMap tie = probmap_from_fg(2, 1, {0.5, 0.49999});
    const BinaryMap bt = binarize(tie, 1, 0.5);
    CHECK(bt.bits == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("binarize rejects invalid arguments") {
    const ProbMap map = probmap_from_fg(2, 2, {0.1, 0.2, 0.3, 0.4});
    CHECK_THROWS_AS(binarize(map, 2, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(binarize(map, -1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(binarize(map, 1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(binarize(map, 1, 1.0), std::invalid_argument);
}

TEST_CASE("validate_probmap accepts valid maps and reports first violation") {
    ProbMap ok = probmap_from_fg(4, 4, std::vector<double>(16, 0.7));
    CHECK(validate_probmap(ok).ok);

    ProbMap oversum = ok;
    oversum.probs[2 * 2 + 0] = 0.6;
    oversum.probs[2 * 2 + 1] = 0.6;
    const ProbMapCheck c1 = validate_probmap(oversum);
    CHECK_FALSE(c1.ok);
    CHECK(c1.pixel == 2);

    ProbMap out_of_range = ok;
    out_of_range.probs[5 * 2 + 0] = -0.1;
    out_of_range.probs[5 * 2 + 1] = 1.1;
    const ProbMapCheck c2 = validate_probmap(out_of_range);
    CHECK_FALSE(c2.ok);
    CHECK(c2.pixel == 5);
}

TEST_CASE("binarize is idempotent on its own output read back as probabilities") {
    Rng rng(7);
    std::vector<double> fg(64);
    for (double& v : fg) v = rng.next_double();
    const BinaryMap once = binarize(probmap_from_fg(8, 8, fg), 1, 0.5);
    std::vector<double> bits(once.bits.begin(), once.bits.end());
    const BinaryMap twice = binarize(probmap_from_fg(8, 8, bits), 1, 0.5);
    CHECK(once.bits == twice.bits);
}

TEST_CASE("binarize depends only on the foreground channel") {
    Rng rng(13);
    ProbMap map;
    map.width = 6;
    map.height = 6;
    map.classes = 3;
    map.probs.resize(36 * 3);
    for (std::size_t j = 0; j < 36; ++j) {
        const double fg = rng.next_double();
        const double rest = 1.0 - fg;
        const double split = rng.next_double();
        map.probs[j * 3 + 0] = rest * split;
        map.probs[j * 3 + 1] = fg;
        map.probs[j * 3 + 2] = rest * (1.0 - split);
    }
    const BinaryMap before = binarize(map, 1, 0.5);

    // shuffle mass between the non-foreground channels
    ProbMap perturbed = map;
    for (std::size_t j = 0; j < 36; ++j) {
        const double rest = perturbed.probs[j * 3 + 0] + perturbed.probs[j * 3 + 2];
        const double split = rng.next_double();
        perturbed.probs[j * 3 + 0] = rest * split;
        perturbed.probs[j * 3 + 2] = rest * (1.0 - split);
    }
    const BinaryMap after = binarize(perturbed, 1, 0.5);
    CHECK(before.bits == after.bits);
}

TEST_CASE("probmap container round-trips at float32 precision") {
    eseg::test::TempDir tmp("pmap");
    Rng rng(3);
    ProbMap map;
    map.width = 5;
    map.height = 3;
    map.classes = 2;
    map.probs.resize(map.pixel_count() * 2);
    for (std::size_t j = 0; j < map.pixel_count(); ++j) {
        // values representable in float32 round-trip exactly
        const double fg = double(float(rng.next_double()));
        map.probs[j * 2 + 0] = 1.0 - fg;
        map.probs[j * 2 + 1] = fg;
    }
    const auto path = tmp.path / "m.pmap";
    save_probmap(path, map);
    const ProbMap loaded = load_probmap(path);
    CHECK(loaded.width == 5);
    CHECK(loaded.height == 3);
    CHECK(loaded.classes == 2);
    for (std::size_t e = 0; e < map.probs.size(); ++e) {
        CHECK(float(loaded.probs[e]) == float(map.probs[e]));
    }

    // header check: magic + dimensions occupy 16 bytes
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "PMAP");
    CHECK(std::filesystem::file_size(path) == 16 + map.probs.size() * 4);
}

TEST_CASE("mask PNGs hold {0,255} and reject other values") {
    eseg::test::TempDir tmp("maskio");
    Mask mask;
    mask.width = 4;
    mask.height = 2;
    mask.labels = {0, 1, 1, 0, 0, 0, 1, 1};
    const auto path = tmp.path / "m.png";
    save_mask_png(path, mask);
    const Mask loaded = load_mask(path);
    CHECK(loaded.labels == mask.labels);

    // a gray PNG with a mid-range value is not a valid mask
    RasterImage gray;
    gray.width = 2;
    gray.height = 1;
    gray.channels = 1;
    gray.values = {0.5f, 1.0f};
    save_image_png(tmp.path / "bad.png", gray);
    CHECK_THROWS_AS(load_mask(tmp.path / "bad.png"), IoError);
}

TEST_CASE("argmax class equals binarize at 0.5 for two classes without ties") {
    Rng rng(99);
    std::vector<double> fg(100);
    for (double& v : fg) {
        do {
            v = rng.next_double();
        } while (v == 0.5);
    }
    const ProbMap map = probmap_from_fg(10, 10, fg);
    const BinaryMap b = binarize(map, 1, 0.5);
    for (std::size_t j = 0; j < fg.size(); ++j) {
        const int argmax = map.probs[j * 2 + 1] > map.probs[j * 2 + 0] ? 1 : 0;
        CHECK(argmax == int(b.bits[j]));
    }
}
