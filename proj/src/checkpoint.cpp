#include "ensembleseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace eseg {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'E', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a_bytes(const void* data, std::size_t size, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

json config_to_json(const BackboneConfig& cfg) {
    return json{{"depth", cfg.depth},
                {"root_features", cfg.root_features},
                {"classes", cfg.classes},
                {"dropout_rate", cfg.dropout_rate},
                {"input_size", cfg.input_size},
                {"in_channels", cfg.in_channels}};
}

BackboneConfig config_from_json(const json& j) {
    BackboneConfig cfg;
    cfg.depth = j.at("depth").get<int>();
    cfg.root_features = j.at("root_features").get<int>();
    cfg.classes = j.at("classes").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.input_size = j.at("input_size").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    return cfg;
}

}  // namespace

ModelCheckpoint checkpoint_from_model(Backbone<float>& model, const ModelLineage& lineage,
                                      const TrainingMeta& meta) {
    ModelCheckpoint ckpt;
    ckpt.config = model.config();
    ckpt.lineage = lineage;
    ckpt.training_meta = meta;
    for (Param<float>* p : model.params()) {
        ckpt.tensors.emplace_back(p->name, p->value);
    }
    return ckpt;
}

Backbone<float> model_from_checkpoint(const ModelCheckpoint& ckpt) {
    Backbone<float> model(ckpt.config);
    const std::vector<Param<float>*> params = model.params();
    if (params.size() != ckpt.tensors.size()) {
        throw CheckpointIntegrityError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                                       " tensors, model expects " +
                                       std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, values] = ckpt.tensors[i];
        if (params[i]->name != name || params[i]->value.size() != values.size()) {
            throw CheckpointIntegrityError("checkpoint tensor '" + name +
                                           "' does not match model tensor '" + params[i]->name +
                                           "'");
        }
        params[i]->value = values;
    }
    return model;
}

ModelCheckpoint copy_model(const ModelCheckpoint& src, const ModelLineage& new_lineage) {
    ModelCheckpoint out = src;
    out.lineage = new_lineage;
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("failed to open checkpoint for write: " + path.string());

    std::uint64_t checksum = 0xcbf29ce484222325ULL;
    auto write = [&](const void* data, std::size_t size) {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        checksum = fnv1a_bytes(data, size, checksum);
    };

    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint32_t count = static_cast<std::uint32_t>(ckpt.tensors.size());
    write(&count, 4);
    for (const auto& [name, values] : ckpt.tensors) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
        const std::uint64_t numel = values.size();
        write(&name_len, 4);
        write(name.data(), name.size());
        write(&numel, 8);
        write(values.data(), values.size() * 4);
    }
    out.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!out) throw IoError("failed writing checkpoint " + path.string());

    json sidecar;
    sidecar["config"] = config_to_json(ckpt.config);
    sidecar["lineage"] = {{"level_index", ckpt.lineage.level_index},
                          {"submodel_index", ckpt.lineage.submodel_index},
                          {"parent", ckpt.lineage.parent}};
    sidecar["training_meta"] = {{"epochs_run", ckpt.training_meta.epochs_run},
                                {"final_val_loss", ckpt.training_meta.final_val_loss}};
    std::ofstream meta(path.string() + ".json", std::ios::trunc);
    if (!meta) throw IoError("failed to open checkpoint sidecar for write: " + path.string());
    meta << sidecar.dump(2) << "\n";
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("failed to open checkpoint " + path.string());

    char magic[4];
    std::uint32_t version = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kVersion) {
        throw CheckpointIntegrityError("bad checkpoint header in " + path.string());
    }

    std::uint64_t checksum = 0xcbf29ce484222325ULL;
    auto read = [&](void* data, std::size_t size) {
        in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
        if (!in) throw CheckpointIntegrityError("truncated checkpoint " + path.string());
        checksum = fnv1a_bytes(data, size, checksum);
    };

    ModelCheckpoint ckpt;
    std::uint32_t count = 0;
    read(&count, 4);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        read(&name_len, 4);
        if (name_len > 4096) {
            throw CheckpointIntegrityError("implausible tensor name length in " + path.string());
        }
        std::string name(name_len, '\0');
        read(name.data(), name_len);
        std::uint64_t numel = 0;
        read(&numel, 8);
        std::vector<float> values(numel);
        read(values.data(), numel * 4);
        ckpt.tensors.emplace_back(std::move(name), std::move(values));
    }
    std::uint64_t stored = 0;
    in.read(reinterpret_cast<char*>(&stored), 8);
    if (!in || stored != checksum) {
        throw CheckpointIntegrityError("checksum mismatch in " + path.string());
    }

    std::ifstream meta(path.string() + ".json");
    if (!meta) throw CheckpointIntegrityError("missing checkpoint sidecar for " + path.string());
    json sidecar;
    try {
        meta >> sidecar;
        ckpt.config = config_from_json(sidecar.at("config"));
        ckpt.lineage.level_index = sidecar.at("lineage").at("level_index").get<int>();
        ckpt.lineage.submodel_index = sidecar.at("lineage").at("submodel_index").get<int>();
        ckpt.lineage.parent = sidecar.at("lineage").at("parent").get<std::string>();
        ckpt.training_meta.epochs_run = sidecar.at("training_meta").at("epochs_run").get<int>();
        ckpt.training_meta.final_val_loss =
            sidecar.at("training_meta").at("final_val_loss").get<double>();
    } catch (const json::exception& e) {
        throw CheckpointIntegrityError("malformed checkpoint sidecar for " + path.string() +
                                       ": " + e.what());
    }
    return ckpt;
}

}  // namespace eseg
