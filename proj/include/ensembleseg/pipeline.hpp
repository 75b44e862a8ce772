#pragma once
// Orchestrates the full iterative procedure: train the initial model M0 on
// the labeled set, pseudo-label the unlabeled pool with it, then per level
// train S_n sub-models (initialized from M0 at level 1, from randomly
// inherited parents afterwards) on their random pseudo-label subsets plus
// all labeled data, and regenerate the pseudo labels by weighted fusion at
// each level boundary. The single model of the final level is the result.
//
// Also provides the two comparison baselines: fully supervised training on
// a labeled subset, and plain self-training (pseudo labels regenerated from
// the raw model output each iteration, no ensemble).
//
// Everything is resumable: manifest.json tracks completed stages, and all
// randomness is derived from (seed, stage tags), so a killed run continues
// bit-exactly in deterministic mode.

#include <filesystem>
#include <map>

#include "ensembleseg/checkpoint.hpp"
#include "ensembleseg/dataset.hpp"
#include "ensembleseg/schedule.hpp"
#include "ensembleseg/synthetic.hpp"
#include "ensembleseg/training.hpp"

namespace eseg {

struct SelfTrainingConfig {
    int iterations = 3;
    TrainConfig train;
};

struct ExperimentConfig {
    std::filesystem::path run_dir;
    std::uint64_t seed = 0;
    int s1 = 16;
    int workers = 1;
    int verbosity = 1;
    int foreground_class = 1;
    double threshold = 0.5;

    enum class DataMode { kSynthetic, kDirectory };
    DataMode data_mode = DataMode::kSynthetic;
    SyntheticSpec synthetic;
    std::filesystem::path image_dir, mask_dir;
    SplitSpec split;

    BackboneConfig backbone;
    TrainConfig train_initial;
    TrainConfig train_submodel;
    TrainConfig train_fs;
    SelfTrainingConfig self_training;

    // Test hook: when >= 0, run_semi_supervised stops after completing this
    // level (0 = after M0 and its pseudo labels) as if the process died.
    int stop_after_level = -1;

    void validate() const;
};

struct StageRecord {
    bool done = false;
    std::string checkpoint;  // path relative to run_dir, empty for pseudo stages
    int epochs_run = 0;
    double final_val_loss = 0.0;
    double seconds = 0.0;
};

struct RunManifest {
    std::uint64_t config_digest = 0;
    LevelPlan plan;
    StageRecord m0;
    std::vector<std::vector<StageRecord>> submodels;  // [level-1][submodel]
    std::vector<StageRecord> pseudo;                  // index = source level (0 = M0 output)
    std::vector<std::vector<int>> parents;            // [level-1] parent indices
    std::string final_checkpoint;
    double total_seconds = 0.0;
};

struct SemiSupervisedResult {
    ModelCheckpoint final_model;
    RunManifest manifest;
};

// Canonical digest of the experiment configuration, stored in the manifest
// and verified on resume.
std::uint64_t config_digest(const ExperimentConfig& cfg);

// Materializes (synthetic mode) or loads the dataset, preprocesses to the
// backbone input size and splits it. Writes <run_dir>/split.json.
DatasetSplit prepare_data(const ExperimentConfig& cfg);

SemiSupervisedResult run_semi_supervised(const ExperimentConfig& cfg, DatasetSplit& data,
                                         bool resume = false);

// FS regime: fixed epochs, no early stopping. Saves checkpoints/fs.ckpt.
ModelCheckpoint run_fully_supervised(const ExperimentConfig& cfg,
                                     const std::vector<Sample>& labeled_subset,
                                     const std::vector<Sample>& validation);

// Self-training comparator: pseudo-label all unlabeled data with the
// current model, retrain on labeled + pseudo, repeat. No CRF refinement;
// pseudo labels are the raw model outputs.
ModelCheckpoint run_self_training_baseline(const ExperimentConfig& cfg, DatasetSplit& data);

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& path);

void save_plan_json(const std::filesystem::path& path, const LevelPlan& plan,
                    const std::vector<std::vector<int>>& parents,
                    const std::vector<SubsetAssignment>& assignments);

}  // namespace eseg
