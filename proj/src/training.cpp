#include "ensembleseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ensembleseg/loss.hpp"

namespace eseg {
namespace {

void check_sample_shape(const Sample& s, const BackboneConfig& cfg) {
    if (s.image.width != cfg.input_size || s.image.height != cfg.input_size ||
        s.image.channels != cfg.in_channels) {
        throw std::invalid_argument("train: sample '" + s.id +
                                    "' does not match the backbone input size/channels");
    }
}

}  // namespace

Tensor4<float> batch_from_images(const std::vector<const Sample*>& samples) {
    const RasterImage& first = samples.front()->image;
    Tensor4<float> x(static_cast<int>(samples.size()), first.channels, first.height, first.width);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const RasterImage& img = samples[b]->image;
        std::copy(img.values.begin(), img.values.end(), x.sample(static_cast<int>(b)));
    }
    return x;
}

Tensor4<float> targets_from_samples(const std::vector<const Sample*>& samples, int classes) {
    const RasterImage& first = samples.front()->image;
    Tensor4<float> t(static_cast<int>(samples.size()), classes, first.height, first.width);
    const std::size_t plane = t.plane();
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const Sample& s = *samples[b];
        float* ts = t.sample(static_cast<int>(b));
        if (s.mask) {
            for (std::size_t j = 0; j < plane; ++j) {
                const float fg = s.mask->labels[j] ? 1.0f : 0.0f;
                ts[j] = 1.0f - fg;
                ts[plane + j] = fg;
            }
        } else if (s.pseudo) {
            const ProbMap& p = *s.pseudo;
            if (p.classes != classes || p.pixel_count() != plane) {
                throw std::invalid_argument("train: pseudo label of sample '" + s.id +
                                            "' does not match the model output shape");
            }
            for (std::size_t j = 0; j < plane; ++j) {
                for (int c = 0; c < classes; ++c) {
                    ts[c * plane + j] = static_cast<float>(p.probs[j * classes + c]);
                }
            }
        } else {
            throw std::invalid_argument("train: sample '" + s.id +
                                        "' carries neither mask nor pseudo label");
        }
    }
    return t;
}

bool early_stop_check(const std::vector<EpochRecord>& history, int patience) {
    if (patience < 1) throw std::invalid_argument("early_stop_check: patience must be >= 1");
    if (history.size() < static_cast<std::size_t>(patience) + 1) return false;
    std::vector<double> prefix_min(history.size());
    double running = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < history.size(); ++i) {
        prefix_min[i] = running;  // min strictly before epoch i
        running = std::min(running, history[i].val_loss);
    }
    for (std::size_t i = history.size() - patience; i < history.size(); ++i) {
        if (history[i].val_loss < prefix_min[i]) return false;
    }
    return true;
}

double evaluate_loss(const Backbone<float>& model, const std::vector<Sample>& samples,
                     int batch_size, bool unnormalized_loss_weights) {
    const double w = unnormalized_loss_weights ? 1.0 : 0.5;
    double weighted = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<const Sample*> batch;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
            batch.push_back(&samples[i]);
        }
        const Tensor4<float> x = batch_from_images(batch);
        const Tensor4<float> t = targets_from_samples(batch, model.config().classes);
        const Tensor4<float> p = model.forward(x, false, nullptr, nullptr);
        const LossBreakdown l = combined_loss(p, t, w, w);
        weighted += l.total * double(batch.size());
        counted += batch.size();
    }
    return counted ? weighted / double(counted) : 0.0;
}

std::vector<EpochRecord> train(Backbone<float>& model, const std::vector<Sample>& labeled,
                               const std::vector<Sample>& pseudo,
                               const std::vector<Sample>& validation, const TrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (labeled.empty() && pseudo.empty()) {
        throw std::invalid_argument("train: empty training set");
    }
    if (cfg.early_stop_patience && validation.empty()) {
        throw std::invalid_argument("train: early stopping requires a validation set");
    }
    for (const Sample& s : validation) {
        check_sample_shape(s, model.config());
        if (!s.mask) {
            throw std::invalid_argument("train: validation sample '" + s.id + "' lacks a mask");
        }
    }

    // Canonical order: union of labeled and pseudo sorted by id. The seeded
    // shuffle below then fully determines the visit order.
    std::vector<const Sample*> pool;
    pool.reserve(labeled.size() + pseudo.size());
    for (const Sample& s : labeled) {
        if (!s.mask) throw std::invalid_argument("train: labeled sample '" + s.id + "' lacks a mask");
        pool.push_back(&s);
    }
    for (const Sample& s : pseudo) {
        if (!s.pseudo) {
            throw std::invalid_argument("train: pseudo sample '" + s.id + "' lacks a pseudo label");
        }
        pool.push_back(&s);
    }
    for (const Sample* s : pool) check_sample_shape(*s, model.config());
    std::sort(pool.begin(), pool.end(),
              [](const Sample* a, const Sample* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < pool.size(); ++i) {
        if (pool[i - 1]->id == pool[i]->id) {
            throw std::invalid_argument("train: duplicate sample id '" + pool[i]->id + "'");
        }
    }

    model.set_dropout_rate(cfg.dropout_rate);
    const double lw = cfg.unnormalized_loss_weights ? 1.0 : 0.5;

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
    AdamOptimizer<float> adam(cfg.learning_rate);
    const std::vector<Param<float>*> params = model.params();

    std::vector<EpochRecord> records;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params;

    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double train_loss_sum = 0.0;
        std::size_t trained = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
                batch.push_back(pool[order[i]]);
            }
            const Tensor4<float> x = batch_from_images(batch);
            const Tensor4<float> t = targets_from_samples(batch, model.config().classes);

            model.zero_grad();
            BackboneTape<float> tape;
            const Tensor4<float> probs = model.forward(x, true, &dropout_rng, &tape);
            Tensor4<float> dlogits;
            const LossBreakdown l = combined_loss_backward(probs, t, dlogits, lw, lw);
            if (!std::isfinite(l.total)) {
                throw TrainingDivergenceError(epoch, "train: non-finite loss at epoch " +
                                                         std::to_string(epoch));
            }
            model.backward(tape, dlogits);
            adam.step(params);
            train_loss_sum += l.total * double(batch.size());
            trained += batch.size();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss_sum / double(trained);
        rec.val_loss = validation.empty()
                           ? rec.train_loss
                           : evaluate_loss(model, validation, cfg.batch_size,
                                           cfg.unnormalized_loss_weights);
        if (!std::isfinite(rec.val_loss)) {
            throw TrainingDivergenceError(epoch, "train: non-finite validation loss at epoch " +
                                                     std::to_string(epoch));
        }
        records.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_loss < best_val) {
            best_val = rec.val_loss;
            best_params.clear();
            best_params.reserve(params.size());
            for (const Param<float>* p : params) best_params.push_back(p->value);
        }
        if (cfg.early_stop_patience && early_stop_check(records, *cfg.early_stop_patience)) {
            break;
        }
    }

    if (!best_params.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    }
    return records;
}

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<EpochRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("failed to open curves file " + path.string());
    out << "epoch,train_loss,val_loss\n";
    out.precision(10);
    for (const EpochRecord& r : records) {
        out << r.epoch << "," << r.train_loss << "," << r.val_loss << "\n";
    }
}

}  // namespace eseg
