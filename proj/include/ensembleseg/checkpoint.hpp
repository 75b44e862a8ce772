#pragma once
// Trained-parameter snapshots. The weights blob is an opaque little-endian
// container (magic "ESCK", per-tensor name + float32 payload, trailing
// checksum); config, lineage and training metadata live in a JSON sidecar
// next to it (<path>.json). Round-trips are bit-exact.

#include <filesystem>
#include <utility>
#include <vector>

#include "ensembleseg/backbone.hpp"

namespace eseg {

struct ModelLineage {
    int level_index = 0;     // 0 = initial model M0
    int submodel_index = 0;
    std::string parent;      // empty for M0
};

struct TrainingMeta {
    int epochs_run = 0;
    double final_val_loss = 0.0;
};

struct ModelCheckpoint {
    BackboneConfig config;
    ModelLineage lineage;
    TrainingMeta training_meta;
    std::vector<std::pair<std::string, std::vector<float>>> tensors;

    std::string stem() const {
        return std::to_string(lineage.level_index) + "_" + std::to_string(lineage.submodel_index);
    }
};

ModelCheckpoint checkpoint_from_model(Backbone<float>& model, const ModelLineage& lineage,
                                      const TrainingMeta& meta);

// Throws CheckpointIntegrityError when tensor names/sizes do not match the
// checkpoint's config.
Backbone<float> model_from_checkpoint(const ModelCheckpoint& ckpt);

// Parameter-identical copy with fresh lineage.
ModelCheckpoint copy_model(const ModelCheckpoint& src, const ModelLineage& new_lineage);

// path names the .ckpt blob; the sidecar is written to path + ".json".
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eseg
