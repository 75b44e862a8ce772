#pragma once
// Epoch loop over mixed labeled + pseudo-labeled batches with validation
// tracking, patience-based early stopping and best-epoch restoration.
//
// Labeled samples contribute hard one-hot targets from their masks, pseudo
// samples contribute their soft probability maps; both are mixed uniformly
// with equal per-sample weight. The combined set is canonicalized by sample
// id before the seeded shuffle, so the visit order depends on the seed, not
// on the order the caller assembled the lists in.

#include <filesystem>
#include <functional>
#include <optional>

#include "ensembleseg/backbone.hpp"
#include "ensembleseg/types.hpp"

namespace eseg {

struct TrainConfig {
    int max_epochs = 200;
    int batch_size = 10;
    double learning_rate = 1e-4;
    double dropout_rate = 0.25;
    std::optional<int> early_stop_patience;  // nullopt disables early stopping
    std::uint64_t seed = 0;
    // false: 0.5*CE + 0.5*(1 - dice); true: the unnormalized 1.0/1.0 sum,
    // identical up to a constant gradient scale.
    bool unnormalized_loss_weights = false;

    void validate() const {
        if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
        if (early_stop_patience && *early_stop_patience < 1) {
            throw std::invalid_argument("train: early_stop_patience must be >= 1");
        }
    }
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

// True iff each of the last `patience` epochs has a validation loss that is
// not below the minimum of all epochs strictly before it. Never fires before
// epoch patience+1.
bool early_stop_check(const std::vector<EpochRecord>& history, int patience);

// Trains the model in place and returns the per-epoch records. The model is
// left at the parameters of the best-validation-loss epoch. When the
// validation set is empty (allowed only with early stopping disabled) the
// epoch's training loss stands in for the validation loss.
std::vector<EpochRecord> train(Backbone<float>& model, const std::vector<Sample>& labeled,
                               const std::vector<Sample>& pseudo,
                               const std::vector<Sample>& validation, const TrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

// Mean combined loss of the model over labeled samples, eval mode.
double evaluate_loss(const Backbone<float>& model, const std::vector<Sample>& samples,
                     int batch_size, bool unnormalized_loss_weights = false);

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<EpochRecord>& records);

// Batch/target construction shared with the pipeline and tests.
Tensor4<float> batch_from_images(const std::vector<const Sample*>& samples);
Tensor4<float> targets_from_samples(const std::vector<const Sample*>& samples, int classes);

}  // namespace eseg
