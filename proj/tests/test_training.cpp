#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "ensembleseg/loss.hpp"
#include "ensembleseg/synthetic.hpp"
#include "ensembleseg/training.hpp"
#include "support/test_util.hpp"

using namespace eseg;

namespace {

std::vector<EpochRecord> records_from(const std::vector<double>& val_losses) {
    std::vector<EpochRecord> out;
    for (std::size_t i = 0; i < val_losses.size(); ++i) {
        out.push_back(EpochRecord{int(i) + 1, 0.0, val_losses[i]});
    }
    return out;
}

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.depth = 2;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    cfg.dropout_rate = 0.0;
    return cfg;
}

// small labeled samples from the synthetic generator, resized to 16x16
std::vector<Sample> tiny_samples(int count, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.count = count;
    spec.image_size = 16;
    spec.min_blobs = 1;
    spec.max_blobs = 1;
    spec.contrast = 0.7;
    spec.noise = 0.05;
    spec.seed = seed;
    return synth_generate(spec);
}

}  // namespace

TEST_CASE("early stop fires exactly at the derived epochs") {
    // five consecutive epochs not improving on the best 0.9
    const auto h1 = records_from({1.0, 0.9, 0.95, 0.94, 0.93, 0.92, 0.91});
    CHECK(early_stop_check(h1, 5));
    const auto h1_before = records_from({1.0, 0.9, 0.95, 0.94, 0.93, 0.92});
    CHECK_FALSE(early_stop_check(h1_before, 5));

    const auto h2 = records_from({1.0, 1.1, 1.2, 1.3, 1.4, 1.5});
    CHECK(early_stop_check(h2, 5));
    CHECK_FALSE(early_stop_check(records_from({1.0, 1.1, 1.2, 1.3, 1.4}), 5));

    // strictly decreasing never stops
    std::vector<double> decreasing;
    for (int i = 0; i < 50; ++i) decreasing.push_back(1.0 - 0.01 * i);
    CHECK_FALSE(early_stop_check(records_from(decreasing), 5));
}

TEST_CASE("early stop never fires before epoch patience+1") {
    for (int len = 1; len <= 5; ++len) {
        CHECK_FALSE(early_stop_check(records_from(std::vector<double>(len, 1.0)), 5));
    }
    CHECK(early_stop_check(records_from(std::vector<double>(6, 1.0)), 5));
    CHECK_THROWS_AS(early_stop_check({}, 0), std::invalid_argument);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const std::vector<Sample> data = tiny_samples(6, 100);
    const std::vector<Sample> train_set(data.begin(), data.begin() + 4);
    const std::vector<Sample> val_set(data.begin() + 4, data.end());

    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 2;
    tc.learning_rate = 1e-3;
    tc.dropout_rate = 0.25;
    tc.seed = 5;

    auto run = [&]() {
        Backbone<float> model(tiny_config());
        Rng init(77);
        model.init_params(init);
        return train(model, train_set, {}, val_set, tc);
    };
    const auto r1 = run();
    const auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].train_loss == r2[i].train_loss);
        CHECK(r1[i].val_loss == r2[i].val_loss);
    }
}

TEST_CASE("sample visit order is seed-determined, not input-order-determined") {
    const std::vector<Sample> data = tiny_samples(6, 200);
    std::vector<Sample> forward(data.begin(), data.begin() + 4);
    std::vector<Sample> reversed = forward;
    std::reverse(reversed.begin(), reversed.end());
    const std::vector<Sample> val_set(data.begin() + 4, data.end());

    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 1;
    tc.learning_rate = 1e-3;
    tc.dropout_rate = 0.0;
    tc.seed = 9;

    auto run = [&](const std::vector<Sample>& labeled) {
        Backbone<float> model(tiny_config());
        Rng init(5);
        model.init_params(init);
        return train(model, labeled, {}, val_set, tc);
    };
    const auto a = run(forward);
    const auto b = run(reversed);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].train_loss == b[i].train_loss);
        CHECK(a[i].val_loss == b[i].val_loss);
    }
}

TEST_CASE("the returned model is the best-validation epoch") {
    const std::vector<Sample> data = tiny_samples(8, 300);
    const std::vector<Sample> train_set(data.begin(), data.begin() + 5);
    const std::vector<Sample> val_set(data.begin() + 5, data.end());

    TrainConfig tc;
    tc.max_epochs = 8;
    tc.batch_size = 2;
    tc.learning_rate = 3e-3;
    tc.dropout_rate = 0.0;
    tc.seed = 31;

    Backbone<float> model(tiny_config());
    Rng init(32);
    model.init_params(init);
    const auto records = train(model, train_set, {}, val_set, tc);

    double best = records[0].val_loss;
    for (const EpochRecord& r : records) best = std::min(best, r.val_loss);
    const double restored = evaluate_loss(model, val_set, tc.batch_size);
    CHECK(restored == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("pseudo-labeled samples train through soft targets") {
    const std::vector<Sample> data = tiny_samples(6, 400);
    const std::vector<Sample> labeled(data.begin(), data.begin() + 2);
    const std::vector<Sample> val_set(data.begin() + 4, data.end());

    // turn two labeled samples into soft pseudo-labeled ones
    std::vector<Sample> pseudo;
    for (auto it = data.begin() + 2; it != data.begin() + 4; ++it) {
        Sample s;
        s.id = it->id;
        s.image = it->image;
        ProbMap soft;
        soft.width = 16;
        soft.height = 16;
        soft.classes = 2;
        soft.probs.resize(256 * 2);
        for (std::size_t j = 0; j < 256; ++j) {
            const double fg = it->mask->labels[j] ? 0.9 : 0.1;
            soft.probs[j * 2 + 0] = 1.0 - fg;
            soft.probs[j * 2 + 1] = fg;
        }
        s.pseudo = soft;
        pseudo.push_back(std::move(s));
    }

    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 2;
    tc.learning_rate = 1e-3;
    tc.dropout_rate = 0.0;
    tc.seed = 8;

    Backbone<float> model(tiny_config());
    Rng init(6);
    model.init_params(init);
    const auto records = train(model, labeled, pseudo, val_set, tc);
    CHECK(records.size() == 2);
    for (const EpochRecord& r : records) CHECK(std::isfinite(r.train_loss));
}

TEST_CASE("training rejects an empty training set and missing validation") {
    Backbone<float> model(tiny_config());
    Rng init(1);
    model.init_params(init);
    TrainConfig tc;
    tc.max_epochs = 1;
    CHECK_THROWS_AS(train(model, {}, {}, {}, tc), std::invalid_argument);

    const std::vector<Sample> data = tiny_samples(2, 500);
    TrainConfig with_patience = tc;
    with_patience.early_stop_patience = 3;
    CHECK_THROWS_AS(train(model, data, {}, {}, with_patience), std::invalid_argument);
}

TEST_CASE("non-finite losses raise a divergence error with the epoch") {
    const std::vector<Sample> data = tiny_samples(2, 600);
    Backbone<float> model(tiny_config());
    Rng init(2);
    model.init_params(init);
    // poison one parameter
    model.params()[0]->value[0] = std::numeric_limits<float>::quiet_NaN();

    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 1;
    tc.learning_rate = 1e-3;
    tc.dropout_rate = 0.0;
    tc.seed = 3;
    try {
        train(model, data, {}, {}, tc);
        FAIL("expected TrainingDivergenceError");
    } catch (const TrainingDivergenceError& e) {
        CHECK(e.epoch == 1);
    }
}

TEST_CASE("a single sample can be overfit to near-zero loss") {
    const std::vector<Sample> data = tiny_samples(1, 700);
    Backbone<float> model(tiny_config());
    Rng init(4);
    model.init_params(init);

    TrainConfig tc;
    tc.max_epochs = 200;
    tc.batch_size = 1;
    tc.learning_rate = 3e-3;
    tc.dropout_rate = 0.0;
    tc.seed = 44;
    const auto records = train(model, data, {}, {}, tc);
    CHECK(records.back().train_loss < 0.05);
}
