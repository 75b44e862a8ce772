#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "ensembleseg/checkpoint.hpp"
#include "ensembleseg/loss.hpp"
#include "support/test_util.hpp"

using namespace eseg;

namespace {

template <class T>
Tensor4<T> random_input(Rng& rng, int n, int c, int h, int w) {
    Tensor4<T> x(n, c, h, w);
    for (T& v : x.v) v = static_cast<T>(rng.normal());
    return x;
}

// random soft target summing to 1 across two classes
template <class T>
Tensor4<T> random_target(Rng& rng, int n, int h, int w) {
    Tensor4<T> t(n, 2, h, w);
    const std::size_t plane = t.plane();
    for (int s = 0; s < n; ++s) {
        T* ts = t.sample(s);
        for (std::size_t j = 0; j < plane; ++j) {
            const double fg = rng.next_double();
            ts[j] = static_cast<T>(1.0 - fg);
            ts[plane + j] = static_cast<T>(fg);
        }
    }
    return t;
}

}  // namespace

TEST_CASE("default config maps 128x128x3 inputs to 128x128x2 probabilities") {
    BackboneConfig cfg;  // depth 5, root 16, classes 2, input 128, 3 channels
    Backbone<float> model(cfg);
    Rng init(1);
    model.init_params(init);

    Rng rng(2);
    const Tensor4<float> x = random_input<float>(rng, 1, 3, 128, 128);
    const Tensor4<float> p = model.forward(x, false, nullptr, nullptr);
    CHECK(p.n == 1);
    CHECK(p.c == 2);
    CHECK(p.h == 128);
    CHECK(p.w == 128);
    const std::size_t plane = p.plane();
    double worst = 0.0;
    for (std::size_t j = 0; j < plane; ++j) {
        const double sum = double(p.v[j]) + double(p.v[plane + j]);
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("depth-1 backbone keeps the spatial size without pooling") {
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    Backbone<float> model(cfg);
    Rng init(3);
    model.init_params(init);
    Rng rng(4);
    const Tensor4<float> p =
        model.forward(random_input<float>(rng, 2, 1, 16, 16), false, nullptr, nullptr);
    CHECK(p.h == 16);
    CHECK(p.w == 16);
    CHECK(p.c == 2);
}

TEST_CASE("config validation rejects mismatched input size") {
    BackboneConfig cfg;
    cfg.depth = 5;
    cfg.input_size = 100;  // not divisible by 16
    CHECK_THROWS_AS(Backbone<float>{cfg}, std::invalid_argument);
}

TEST_CASE("loss anchors") {
    // perfect one-hot prediction
    Tensor4<float> target(1, 2, 2, 2);
    target.at(0, 1, 0, 0) = 1.0f;
    target.at(0, 0, 0, 1) = 1.0f;
    target.at(0, 0, 1, 0) = 1.0f;
    target.at(0, 1, 1, 1) = 1.0f;
    const LossBreakdown perfect = combined_loss(target, target);
    CHECK(perfect.total <= 1e-5);

    // uniform prediction: CE term is ln 2
    Tensor4<float> uniform(1, 2, 2, 2);
    uniform.fill(0.5f);
    const LossBreakdown u = combined_loss(uniform, target);
    CHECK(u.cross_entropy == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // worked 2-pixel example: fg target [1,0], prediction [0.5,0.5]
    Tensor4<float> t2(1, 2, 1, 2);
    t2.at(0, 1, 0, 0) = 1.0f;
    t2.at(0, 0, 0, 1) = 1.0f;
    Tensor4<float> p2(1, 2, 1, 2);
    p2.fill(0.5f);
    const LossBreakdown w = combined_loss(p2, t2);
    CHECK(w.soft_dice == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(w.dice_term == doctest::Approx(0.25).epsilon(1e-5));
    CHECK(w.total == doctest::Approx(0.5966).epsilon(1e-3));
}

TEST_CASE("loss rejects mismatched shapes") {
    Tensor4<float> a(1, 2, 2, 2), b(1, 2, 2, 3);
    CHECK_THROWS_AS(combined_loss(a, b), std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
    BackboneConfig cfg;
    cfg.depth = 2;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    cfg.dropout_rate = 0.0;  // dropout off: the loss must be deterministic in the parameters
    Backbone<double> model(cfg);
    Rng init(42);
    model.init_params(init);

    Rng rng(43);
    const Tensor4<double> x = random_input<double>(rng, 2, 1, 16, 16);
    const Tensor4<double> target = random_target<double>(rng, 2, 16, 16);

    auto loss_at = [&]() {
        const Tensor4<double> p = model.forward(x, false, nullptr, nullptr);
        return combined_loss(p, target).total;
    };

    model.zero_grad();
    BackboneTape<double> tape;
    const Tensor4<double> probs = model.forward(x, true, nullptr, &tape);
    Tensor4<double> dlogits;
    combined_loss_backward(probs, target, dlogits);
    model.backward(tape, dlogits);

    const std::vector<Param<double>*> params = model.params();
    const double step = 1e-4;
    int valid = 0;
    double worst_rel = 0.0;
    for (int probe = 0; probe < 40; ++probe) {
        Param<double>& p = *params[rng.below(params.size())];
        const std::size_t idx = rng.below(p.value.size());
        const double analytic = p.grad[idx];

        const double saved = p.value[idx];
        auto central = [&](double h) {
            p.value[idx] = saved + h;
            const double up = loss_at();
            p.value[idx] = saved - h;
            const double down = loss_at();
            p.value[idx] = saved;
            return (up - down) / (2.0 * h);
        };
        const double numeric = central(step);
        const double numeric_half = central(step / 2.0);
        // skip probes where a relu/maxpool kink falls inside the interval
        // (the two step sizes disagree); a wrong analytic gradient is still
        // caught because both quotients would agree against it
        const double self_rel = std::abs(numeric - numeric_half) /
                                std::max({std::abs(numeric), std::abs(numeric_half), 1e-8});
        if (self_rel > 1e-4) continue;
        ++valid;

        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        worst_rel = std::max(worst_rel, rel);
    }
    CHECK(valid >= 32);
    CHECK(worst_rel < 1e-3);
}

TEST_CASE("initialization is seed-deterministic") {
    BackboneConfig cfg;
    cfg.depth = 2;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    Backbone<float> a(cfg), b(cfg);
    Rng ra(7), rb(7);
    a.init_params(ra);
    b.init_params(rb);
    const auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->value == pb[i]->value);
    }
}

TEST_CASE("checkpoints round-trip bit-exactly and copies share parameters") {
    eseg::test::TempDir tmp("ckpt");
    BackboneConfig cfg;
    cfg.depth = 2;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    Backbone<float> model(cfg);
    Rng init(11);
    model.init_params(init);

    const ModelCheckpoint ckpt =
        checkpoint_from_model(model, ModelLineage{0, 0, ""}, TrainingMeta{12, 0.25});
    const auto path = tmp.path / "m.ckpt";
    save_checkpoint(path, ckpt);
    const ModelCheckpoint loaded = load_checkpoint(path);

    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
        CHECK(loaded.tensors[i].second == ckpt.tensors[i].second);  // bitwise float equality
    }
    CHECK(loaded.training_meta.epochs_run == 12);

    // copies predict identically, including copies of copies
    RasterImage img;
    img.width = 16;
    img.height = 16;
    img.channels = 1;
    img.values.resize(256);
    Rng rng(12);
    for (float& v : img.values) v = rng.next_float();

    const ModelCheckpoint copy1 = copy_model(loaded, ModelLineage{1, 3, "0_0"});
    const ModelCheckpoint copy2 = copy_model(copy1, ModelLineage{2, 0, "1_3"});
    CHECK(copy1.lineage.submodel_index == 3);
    CHECK(copy2.lineage.parent == "1_3");

    Backbone<float> m0 = model_from_checkpoint(loaded);
    Backbone<float> m2 = model_from_checkpoint(copy2);
    const ProbMap out0 = m0.predict(img);
    const ProbMap out2 = m2.predict(img);
    CHECK(out0.probs == out2.probs);

    // sixteen copies: distinct lineage, equal parameters
    for (int i = 0; i < 16; ++i) {
        const ModelCheckpoint c = copy_model(loaded, ModelLineage{1, i, "0_0"});
        CHECK(c.lineage.submodel_index == i);
        CHECK(c.tensors == loaded.tensors);
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    eseg::test::TempDir tmp("ckpt_bad");
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.root_features = 2;
    cfg.input_size = 8;
    cfg.in_channels = 1;
    Backbone<float> model(cfg);
    Rng init(5);
    model.init_params(init);
    const auto path = tmp.path / "m.ckpt";
    save_checkpoint(path, checkpoint_from_model(model, ModelLineage{0, 0, ""}, TrainingMeta{}));

    // flip one payload byte
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char b;
    f.seekg(64);
    f.get(b);
    f.seekp(64);
    f.put(static_cast<char>(b ^ 0x5a));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointIntegrityError);
}

TEST_CASE("predict is reentrant across threads") {
    BackboneConfig cfg;
    cfg.depth = 2;
    cfg.root_features = 4;
    cfg.input_size = 16;
    cfg.in_channels = 1;
    Backbone<float> model(cfg);
    Rng init(9);
    model.init_params(init);

    RasterImage img;
    img.width = 16;
    img.height = 16;
    img.channels = 1;
    img.values.resize(256);
    Rng rng(10);
    for (float& v : img.values) v = rng.next_float();

    const ProbMap reference = model.predict(img);
    std::vector<ProbMap> results(4);
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] { results[i] = model.predict(img); });
    }
    for (auto& t : threads) t.join();
    for (const ProbMap& r : results) CHECK(r.probs == reference.probs);
}
