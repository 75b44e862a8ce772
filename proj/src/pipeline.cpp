#include "ensembleseg/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "ensembleseg/fusion.hpp"
#include "ensembleseg/image_io.hpp"

namespace eseg {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

json train_config_to_json(const TrainConfig& cfg) {
    json j{{"max_epochs", cfg.max_epochs},
           {"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"dropout_rate", cfg.dropout_rate},
           {"unnormalized_loss_weights", cfg.unnormalized_loss_weights}};
    if (cfg.early_stop_patience) j["early_stop_patience"] = *cfg.early_stop_patience;
    return j;
}

// Canonical JSON for the digest; excludes execution details (workers,
// verbosity, stop_after_level) that cannot affect results.
json config_to_canonical_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["s1"] = cfg.s1;
    j["foreground_class"] = cfg.foreground_class;
    j["threshold"] = cfg.threshold;
    j["data_mode"] = cfg.data_mode == ExperimentConfig::DataMode::kSynthetic ? "synthetic"
                                                                             : "directory";
    j["synthetic"] = {{"count", cfg.synthetic.count},       {"image_size", cfg.synthetic.image_size},
                      {"min_blobs", cfg.synthetic.min_blobs}, {"max_blobs", cfg.synthetic.max_blobs},
                      {"contrast", cfg.synthetic.contrast},   {"noise", cfg.synthetic.noise},
                      {"seed", cfg.synthetic.seed}};
    j["image_dir"] = cfg.image_dir.string();
    j["mask_dir"] = cfg.mask_dir.string();
    j["split"] = {{"test_fraction", cfg.split.test_fraction},
                  {"labeled_count", cfg.split.labeled_count},
                  {"validation_count", cfg.split.validation_count},
                  {"seed", cfg.split.seed}};
    j["backbone"] = {{"depth", cfg.backbone.depth},
                     {"root_features", cfg.backbone.root_features},
                     {"classes", cfg.backbone.classes},
                     {"dropout_rate", cfg.backbone.dropout_rate},
                     {"input_size", cfg.backbone.input_size},
                     {"in_channels", cfg.backbone.in_channels}};
    j["train_initial"] = train_config_to_json(cfg.train_initial);
    j["train_submodel"] = train_config_to_json(cfg.train_submodel);
    j["train_fs"] = train_config_to_json(cfg.train_fs);
    j["self_training"] = {{"iterations", cfg.self_training.iterations},
                          {"train", train_config_to_json(cfg.self_training.train)}};
    return j;
}

json stage_to_json(const StageRecord& s) {
    return json{{"done", s.done},
                {"checkpoint", s.checkpoint},
                {"epochs_run", s.epochs_run},
                {"final_val_loss", s.final_val_loss},
                {"seconds", s.seconds}};
}

StageRecord stage_from_json(const json& j) {
    StageRecord s;
    s.done = j.at("done").get<bool>();
    s.checkpoint = j.at("checkpoint").get<std::string>();
    s.epochs_run = j.at("epochs_run").get<int>();
    s.final_val_loss = j.at("final_val_loss").get<double>();
    s.seconds = j.at("seconds").get<double>();
    return s;
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("failed to open " + tmp.string());
        out << contents;
    }
    std::filesystem::rename(tmp, path);
}

// Pseudo labels are stored (and consumed) at float32 precision so the
// in-memory values always match what a resumed run reads back from disk.
void quantize_probmap(ProbMap& map) {
    for (double& p : map.probs) p = static_cast<double>(static_cast<float>(p));
}

std::filesystem::path pseudo_dir(const std::filesystem::path& run_dir, int level) {
    return run_dir / "pseudo" / ("level_" + std::to_string(level));
}

void save_pseudo_level(const std::filesystem::path& run_dir, int level,
                       const std::vector<Sample>& unlabeled,
                       const std::vector<PseudoLabel>& labels) {
    const std::filesystem::path dir = pseudo_dir(run_dir, level);
    std::filesystem::create_directories(dir);
    json weights = json::object();
    for (std::size_t k = 0; k < unlabeled.size(); ++k) {
        save_probmap(dir / (unlabeled[k].id + ".pmap"), labels[k].map);
        weights[unlabeled[k].id] = labels[k].weights_used.values;
    }
    atomic_write(dir / "weights.json", weights.dump(2) + "\n");
}

std::map<std::string, ProbMap> load_pseudo_level(const std::filesystem::path& run_dir,
                                                 int level) {
    const std::filesystem::path dir = pseudo_dir(run_dir, level);
    std::map<std::string, ProbMap> out;
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("missing pseudo-label directory " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".pmap") {
            out.emplace(entry.path().stem().string(), load_probmap(entry.path()));
        }
    }
    return out;
}

struct Logger {
    int verbosity;
    std::mutex mutex;

    void line(int level, const std::string& msg) {
        if (verbosity >= level) {
            std::lock_guard<std::mutex> lock(mutex);
            std::cout << msg << "\n" << std::flush;
        }
    }
};

Segmenter segmenter_of(std::shared_ptr<Backbone<float>> model) {
    return [model](const RasterImage& image) { return model->predict(image); };
}

}  // namespace

void ExperimentConfig::validate() const {
    if (run_dir.empty()) throw std::invalid_argument("config: run_dir must be set");
    if (s1 < 1 || (s1 & (s1 - 1)) != 0) {
        throw std::invalid_argument("config: s1 must be a power of two");
    }
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
    if (foreground_class < 0 || foreground_class >= backbone.classes) {
        throw std::invalid_argument("config: foreground_class out of range");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("config: threshold must lie in (0,1)");
    }
    if (data_mode == DataMode::kSynthetic) {
        synthetic.validate();
        if (synthetic.image_size % (1 << (backbone.depth - 1)) != 0) {
            throw std::invalid_argument(
                "config: synthetic image_size is not divisible by 2^(depth-1)");
        }
    } else {
        if (image_dir.empty() || mask_dir.empty()) {
            throw std::invalid_argument("config: directory mode requires image_dir and mask_dir");
        }
    }
    split.validate();
    backbone.validate();
    train_initial.validate();
    train_submodel.validate();
    train_fs.validate();
    if (self_training.iterations < 0) {
        throw std::invalid_argument("config: self_training.iterations must be >= 0");
    }
    self_training.train.validate();
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
    return fnv1a64(config_to_canonical_json(cfg).dump());
}

DatasetSplit prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.run_dir);

    std::filesystem::path image_dir = cfg.image_dir, mask_dir = cfg.mask_dir;
    if (cfg.data_mode == ExperimentConfig::DataMode::kSynthetic) {
        image_dir = cfg.run_dir / "data" / "images";
        mask_dir = cfg.run_dir / "data" / "masks";
        // Regenerate when the directory is missing or was produced by a
        // different synthetic spec.
        const json spec_json{{"count", cfg.synthetic.count},
                             {"image_size", cfg.synthetic.image_size},
                             {"min_blobs", cfg.synthetic.min_blobs},
                             {"max_blobs", cfg.synthetic.max_blobs},
                             {"contrast", cfg.synthetic.contrast},
                             {"noise", cfg.synthetic.noise},
                             {"seed", cfg.synthetic.seed}};
        const std::filesystem::path spec_path = cfg.run_dir / "data" / "spec.json";
        bool regenerate = !std::filesystem::is_directory(image_dir);
        if (!regenerate) {
            std::ifstream in(spec_path);
            json existing;
            if (in) {
                try {
                    in >> existing;
                } catch (const json::exception&) {
                }
            }
            regenerate = existing != spec_json;
        }
        if (regenerate) {
            std::filesystem::remove_all(cfg.run_dir / "data");
            synth_write(cfg.run_dir / "data", synth_generate(cfg.synthetic));
            atomic_write(spec_path, spec_json.dump(2) + "\n");
        }
    }

    std::vector<Sample> raw = load_dataset(image_dir, mask_dir);
    std::vector<Sample> processed;
    processed.reserve(raw.size());
    bool warned = false;
    for (Sample& s : raw) {
        PreprocessResult pre = preprocess(s.image, s.mask, cfg.backbone.input_size);
        if (pre.constant_channel && !warned) {
            std::cerr << "warning: constant-intensity channel in sample '" << s.id
                      << "'; normalization used the std floor\n";
            warned = true;
        }
        Sample p;
        p.id = std::move(s.id);
        p.image = std::move(pre.image);
        p.mask = std::move(pre.mask);
        processed.push_back(std::move(p));
    }

    DatasetSplit split_result = split(std::move(processed), cfg.split);

    json roles;
    auto ids_of = [](const std::vector<Sample>& v) {
        std::vector<std::string> ids;
        ids.reserve(v.size());
        for (const Sample& s : v) ids.push_back(s.id);
        return ids;
    };
    roles["test"] = ids_of(split_result.test);
    roles["labeled"] = ids_of(split_result.labeled);
    roles["validation"] = ids_of(split_result.validation);
    roles["unlabeled"] = ids_of(split_result.unlabeled);
    atomic_write(cfg.run_dir / "split.json", roles.dump(2) + "\n");
    return split_result;
}

void save_plan_json(const std::filesystem::path& path, const LevelPlan& plan,
                    const std::vector<std::vector<int>>& parents,
                    const std::vector<SubsetAssignment>& assignments) {
    json j;
    j["n0"] = plan.n0;
    j["levels"] = json::array();
    for (std::size_t i = 0; i < plan.levels.size(); ++i) {
        const LevelSpec& spec = plan.levels[i];
        json level{{"level", spec.level_index},
                   {"submodels", spec.submodel_count},
                   {"subset_size", spec.subset_size},
                   {"parents", parents[i]}};
        json subsets = json::array();
        for (const auto& ids : assignments[i].per_submodel) subsets.push_back(ids);
        level["subsets"] = subsets;
        j["levels"].push_back(level);
    }
    atomic_write(path, j.dump(2) + "\n");
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
    json j;
    j["config_digest"] = m.config_digest;
    j["n0"] = m.plan.n0;
    j["plan"] = json::array();
    for (const LevelSpec& spec : m.plan.levels) {
        j["plan"].push_back({{"level", spec.level_index},
                             {"submodels", spec.submodel_count},
                             {"subset_size", spec.subset_size}});
    }
    j["m0"] = stage_to_json(m.m0);
    j["submodels"] = json::array();
    for (const auto& level : m.submodels) {
        json stages = json::array();
        for (const StageRecord& s : level) stages.push_back(stage_to_json(s));
        j["submodels"].push_back(stages);
    }
    j["pseudo"] = json::array();
    for (const StageRecord& s : m.pseudo) j["pseudo"].push_back(stage_to_json(s));
    j["parents"] = m.parents;
    j["final_checkpoint"] = m.final_checkpoint;
    j["total_seconds"] = m.total_seconds;
    atomic_write(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("failed to open manifest " + path.string());
    json j;
    in >> j;
    RunManifest m;
    m.config_digest = j.at("config_digest").get<std::uint64_t>();
    m.plan.n0 = j.at("n0").get<int>();
    for (const json& level : j.at("plan")) {
        LevelSpec spec;
        spec.level_index = level.at("level").get<int>();
        spec.submodel_count = level.at("submodels").get<int>();
        spec.subset_size = level.at("subset_size").get<int>();
        m.plan.levels.push_back(spec);
    }
    m.m0 = stage_from_json(j.at("m0"));
    for (const json& level : j.at("submodels")) {
        std::vector<StageRecord> stages;
        for (const json& s : level) stages.push_back(stage_from_json(s));
        m.submodels.push_back(std::move(stages));
    }
    for (const json& s : j.at("pseudo")) m.pseudo.push_back(stage_from_json(s));
    m.parents = j.at("parents").get<std::vector<std::vector<int>>>();
    m.final_checkpoint = j.at("final_checkpoint").get<std::string>();
    m.total_seconds = j.at("total_seconds").get<double>();
    return m;
}

namespace {

// Shared context for the semi-supervised run.
struct SemiRun {
    const ExperimentConfig& cfg;
    DatasetSplit& data;
    Logger log;
    RunManifest manifest;
    std::mutex manifest_mutex;
    std::vector<SubsetAssignment> assignments;
    std::map<std::string, ProbMap> pseudo_cache;
    int pseudo_cache_level = -1;

    std::map<std::string, std::size_t> unlabeled_index;

    SemiRun(const ExperimentConfig& c, DatasetSplit& d) : cfg(c), data(d) {
        log.verbosity = c.verbosity;
        for (std::size_t i = 0; i < data.unlabeled.size(); ++i) {
            unlabeled_index.emplace(data.unlabeled[i].id, i);
        }
    }

    std::filesystem::path ckpt_path(const std::string& stem) const {
        return cfg.run_dir / "checkpoints" / (stem + ".ckpt");
    }

    void persist_manifest() {
        save_manifest(cfg.run_dir / "manifest.json", manifest);
    }

    const Sample& unlabeled_by_id(const std::string& id) const {
        const auto it = unlabeled_index.find(id);
        if (it == unlabeled_index.end()) {
            throw std::invalid_argument("unknown unlabeled sample id '" + id + "'");
        }
        return data.unlabeled[it->second];
    }

    // Regenerate pseudo labels from the given level's sub-models and persist
    // them.
    void regenerate_pseudo(int source_level, const std::vector<std::string>& stems) {
        const auto start = Clock::now();
        std::vector<Segmenter> models;
        models.reserve(stems.size());
        for (const std::string& stem : stems) {
            models.push_back(
                segmenter_of(std::make_shared<Backbone<float>>(
                    model_from_checkpoint(load_checkpoint(ckpt_path(stem))))));
        }
        std::vector<PseudoLabel> labels =
            generate_pseudo_labels(models, data.unlabeled, cfg.foreground_class, cfg.threshold,
                                   source_level, cfg.workers);
        for (PseudoLabel& l : labels) quantize_probmap(l.map);
        save_pseudo_level(cfg.run_dir, source_level, data.unlabeled, labels);

        pseudo_cache.clear();
        for (std::size_t k = 0; k < data.unlabeled.size(); ++k) {
            pseudo_cache.emplace(data.unlabeled[k].id, std::move(labels[k].map));
        }
        pseudo_cache_level = source_level;

        StageRecord& rec = manifest.pseudo[source_level];
        rec.done = true;
        rec.seconds = seconds_since(start);
        persist_manifest();
        log.line(1, "[pseudo] level " + std::to_string(source_level) + " regenerated (" +
                        std::to_string(data.unlabeled.size()) + " maps)");
    }

    void ensure_pseudo_cache(int level) {
        if (pseudo_cache_level != level) {
            pseudo_cache = load_pseudo_level(cfg.run_dir, level);
            pseudo_cache_level = level;
        }
    }
};

}  // namespace

SemiSupervisedResult run_semi_supervised(const ExperimentConfig& cfg, DatasetSplit& data,
                                         bool resume) {
    cfg.validate();
    const auto run_start = Clock::now();
    SemiRun run(cfg, data);
    std::filesystem::create_directories(cfg.run_dir / "checkpoints");
    std::filesystem::create_directories(cfg.run_dir / "curves");

    const int n0 = static_cast<int>(data.unlabeled.size());
    LevelPlan plan = plan_levels(cfg.s1, n0);
    const int final_level = plan.final_level();

    // Parents and subset assignments are pure functions of the seed and the
    // unlabeled pool, precomputed for the whole run.
    std::vector<std::vector<int>> parents(plan.levels.size());
    for (std::size_t i = 0; i < plan.levels.size(); ++i) {
        const LevelSpec& spec = plan.levels[i];
        if (spec.level_index == 1) {
            parents[i].assign(spec.submodel_count, 0);  // all copied from M0
        } else {
            Rng rng(derive_seed(cfg.seed, "parents",
                                static_cast<std::uint64_t>(spec.level_index)));
            parents[i] =
                select_parents(plan.levels[i - 1].submodel_count, spec.submodel_count, rng);
        }
    }
    std::vector<std::string> unlabeled_ids;
    unlabeled_ids.reserve(data.unlabeled.size());
    for (const Sample& s : data.unlabeled) unlabeled_ids.push_back(s.id);
    run.assignments.reserve(plan.levels.size());
    for (const LevelSpec& spec : plan.levels) {
        run.assignments.push_back(assign_subsets(unlabeled_ids, spec.subset_size,
                                                 spec.submodel_count, spec.level_index,
                                                 cfg.seed));
    }
    save_plan_json(cfg.run_dir / "plan.json", plan, parents, run.assignments);

    const std::uint64_t digest = config_digest(cfg);
    const std::filesystem::path manifest_path = cfg.run_dir / "manifest.json";
    if (resume && std::filesystem::exists(manifest_path)) {
        run.manifest = load_manifest(manifest_path);
        if (run.manifest.config_digest != digest) {
            throw std::invalid_argument(
                "resume: manifest belongs to a different configuration (digest mismatch)");
        }
    } else {
        run.manifest.config_digest = digest;
        run.manifest.plan = plan;
        run.manifest.parents = parents;
        run.manifest.submodels.resize(plan.levels.size());
        for (std::size_t i = 0; i < plan.levels.size(); ++i) {
            run.manifest.submodels[i].resize(plan.levels[i].submodel_count);
        }
        run.manifest.pseudo.resize(final_level + 1);
        run.persist_manifest();
    }
    RunManifest& manifest = run.manifest;

    // --- L0: initial model -------------------------------------------------
    if (!manifest.m0.done) {
        const auto start = Clock::now();
        Backbone<float> model(cfg.backbone);
        Rng init_rng(derive_seed(cfg.seed, "init_m0"));
        model.init_params(init_rng);
        TrainConfig tc = cfg.train_initial;
        tc.seed = derive_seed(cfg.seed, "train", 0, 0);
        run.log.line(1, "[m0] training on " + std::to_string(data.labeled.size()) +
                            " labeled samples");
        const std::vector<EpochRecord> records =
            train(model, data.labeled, {}, data.validation, tc,
                  [&](const EpochRecord& r) {
                      run.log.line(2, "[m0] epoch " + std::to_string(r.epoch) + " train " +
                                          std::to_string(r.train_loss) + " val " +
                                          std::to_string(r.val_loss));
                  });
        TrainingMeta meta;
        meta.epochs_run = static_cast<int>(records.size());
        meta.final_val_loss = records.empty() ? 0.0 : records.back().val_loss;
        const ModelCheckpoint ckpt = checkpoint_from_model(model, ModelLineage{0, 0, ""}, meta);
        save_checkpoint(run.ckpt_path("0_0"), ckpt);
        write_curves_csv(cfg.run_dir / "curves" / "0_0.csv", records);

        manifest.m0.done = true;
        manifest.m0.checkpoint = "checkpoints/0_0.ckpt";
        manifest.m0.epochs_run = meta.epochs_run;
        manifest.m0.final_val_loss = meta.final_val_loss;
        manifest.m0.seconds = seconds_since(start);
        run.persist_manifest();
        run.log.line(1, "[m0] done after " + std::to_string(meta.epochs_run) + " epochs");
    }

    // --- bootstrap pseudo labels from M0 ------------------------------------
    if (!manifest.pseudo[0].done) {
        run.regenerate_pseudo(0, {"0_0"});
    }
    if (cfg.stop_after_level == 0) {
        manifest.total_seconds += seconds_since(run_start);
        run.persist_manifest();
        return SemiSupervisedResult{ModelCheckpoint{}, manifest};
    }

    // --- levels -------------------------------------------------------------
    for (std::size_t li = 0; li < plan.levels.size(); ++li) {
        const LevelSpec& spec = plan.levels[li];
        const int level = spec.level_index;

        bool level_done = manifest.pseudo[level].done;
        for (const StageRecord& s : manifest.submodels[li]) level_done &= s.done;
        if (!level_done) {
            run.ensure_pseudo_cache(level - 1);

            std::atomic<int> next{0};
            std::exception_ptr error;
            std::mutex error_mutex;
            auto train_submodel = [&](int idx) {
                if (manifest.submodels[li][idx].done) return;
                const auto start = Clock::now();
                const std::string parent_stem =
                    level == 1 ? "0_0"
                               : std::to_string(level - 1) + "_" +
                                     std::to_string(parents[li][idx]);
                const ModelCheckpoint parent = load_checkpoint(run.ckpt_path(parent_stem));
                const std::string stem =
                    std::to_string(level) + "_" + std::to_string(idx);
                Backbone<float> model = model_from_checkpoint(
                    copy_model(parent, ModelLineage{level, idx, parent_stem}));

                std::vector<Sample> pseudo_samples;
                pseudo_samples.reserve(run.assignments[li].per_submodel[idx].size());
                for (const std::string& id : run.assignments[li].per_submodel[idx]) {
                    const Sample& src = run.unlabeled_by_id(id);
                    Sample s;
                    s.id = src.id;
                    s.image = src.image;
                    s.pseudo = run.pseudo_cache.at(id);
                    pseudo_samples.push_back(std::move(s));
                }

                TrainConfig tc = cfg.train_submodel;
                tc.seed = derive_seed(cfg.seed, "train", static_cast<std::uint64_t>(level),
                                      static_cast<std::uint64_t>(idx));
                const std::vector<EpochRecord> records =
                    train(model, data.labeled, pseudo_samples, data.validation, tc);

                TrainingMeta meta;
                meta.epochs_run = static_cast<int>(records.size());
                meta.final_val_loss = records.empty() ? 0.0 : records.back().val_loss;
                save_checkpoint(run.ckpt_path(stem),
                                checkpoint_from_model(model, ModelLineage{level, idx, parent_stem},
                                                      meta));
                write_curves_csv(cfg.run_dir / "curves" / (stem + ".csv"), records);

                {
                    std::lock_guard<std::mutex> lock(run.manifest_mutex);
                    StageRecord& rec = manifest.submodels[li][idx];
                    rec.done = true;
                    rec.checkpoint = "checkpoints/" + stem + ".ckpt";
                    rec.epochs_run = meta.epochs_run;
                    rec.final_val_loss = meta.final_val_loss;
                    rec.seconds = seconds_since(start);
                    run.persist_manifest();
                }
                run.log.line(1, "[level " + std::to_string(level) + "] sub-model " +
                                    std::to_string(idx) + " done (" +
                                    std::to_string(meta.epochs_run) + " epochs, parent " +
                                    parent_stem + ")");
            };

            auto worker = [&] {
                for (;;) {
                    const int idx = next.fetch_add(1);
                    if (idx >= spec.submodel_count) return;
                    try {
                        train_submodel(idx);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                        return;
                    }
                }
            };
            const int pool_size = std::min(cfg.workers, spec.submodel_count);
            if (pool_size <= 1) {
                worker();
            } else {
                std::vector<std::thread> pool;
                pool.reserve(pool_size);
                for (int i = 0; i < pool_size; ++i) pool.emplace_back(worker);
                for (std::thread& t : pool) t.join();
            }
            if (error) std::rethrow_exception(error);

            if (!manifest.pseudo[level].done) {
                std::vector<std::string> stems;
                stems.reserve(spec.submodel_count);
                for (int i = 0; i < spec.submodel_count; ++i) {
                    stems.push_back(std::to_string(level) + "_" + std::to_string(i));
                }
                run.regenerate_pseudo(level, stems);
            }
        }

        if (cfg.stop_after_level == level && level != final_level) {
            manifest.total_seconds += seconds_since(run_start);
            run.persist_manifest();
            return SemiSupervisedResult{ModelCheckpoint{}, manifest};
        }
    }

    manifest.final_checkpoint =
        "checkpoints/" + std::to_string(final_level) + "_0.ckpt";
    manifest.total_seconds += seconds_since(run_start);
    run.persist_manifest();

    SemiSupervisedResult result;
    result.final_model = load_checkpoint(cfg.run_dir / manifest.final_checkpoint);
    result.manifest = manifest;
    return result;
}

ModelCheckpoint run_fully_supervised(const ExperimentConfig& cfg,
                                     const std::vector<Sample>& labeled_subset,
                                     const std::vector<Sample>& validation) {
    cfg.validate();
    if (labeled_subset.empty()) {
        throw std::invalid_argument("run_fully_supervised: labeled subset is empty");
    }
    std::filesystem::create_directories(cfg.run_dir / "checkpoints");
    std::filesystem::create_directories(cfg.run_dir / "curves");

    Backbone<float> model(cfg.backbone);
    Rng init_rng(derive_seed(cfg.seed, "init_fs"));
    model.init_params(init_rng);
    TrainConfig tc = cfg.train_fs;
    tc.seed = derive_seed(cfg.seed, "train_fs");
    const std::vector<EpochRecord> records = train(model, labeled_subset, {}, validation, tc);

    TrainingMeta meta;
    meta.epochs_run = static_cast<int>(records.size());
    meta.final_val_loss = records.empty() ? 0.0 : records.back().val_loss;
    const ModelCheckpoint ckpt = checkpoint_from_model(model, ModelLineage{0, 0, ""}, meta);
    save_checkpoint(cfg.run_dir / "checkpoints" / "fs.ckpt", ckpt);
    write_curves_csv(cfg.run_dir / "curves" / "fs.csv", records);
    return ckpt;
}

ModelCheckpoint run_self_training_baseline(const ExperimentConfig& cfg, DatasetSplit& data) {
    cfg.validate();
    std::filesystem::create_directories(cfg.run_dir / "checkpoints");
    std::filesystem::create_directories(cfg.run_dir / "curves");

    Backbone<float> model(cfg.backbone);
    Rng init_rng(derive_seed(cfg.seed, "init_self"));
    model.init_params(init_rng);
    TrainConfig tc0 = cfg.train_initial;
    tc0.seed = derive_seed(cfg.seed, "train_self", 0);
    std::vector<EpochRecord> records = train(model, data.labeled, {}, data.validation, tc0);
    write_curves_csv(cfg.run_dir / "curves" / "self_0.csv", records);

    if (!data.unlabeled.empty()) {
        for (int iter = 1; iter <= cfg.self_training.iterations; ++iter) {
            // Pseudo-label every unlabeled image with the current model's raw
            // probability output.
            std::vector<Sample> pseudo_samples;
            pseudo_samples.reserve(data.unlabeled.size());
            for (const Sample& src : data.unlabeled) {
                Sample s;
                s.id = src.id;
                s.image = src.image;
                ProbMap map = model.predict(src.image);
                quantize_probmap(map);
                s.pseudo = std::move(map);
                pseudo_samples.push_back(std::move(s));
            }
            TrainConfig tc = cfg.self_training.train;
            tc.seed = derive_seed(cfg.seed, "train_self", static_cast<std::uint64_t>(iter));
            records = train(model, data.labeled, pseudo_samples, data.validation, tc);
            write_curves_csv(cfg.run_dir / "curves" / ("self_" + std::to_string(iter) + ".csv"),
                             records);
        }
    }

    TrainingMeta meta;
    meta.epochs_run = static_cast<int>(records.size());
    meta.final_val_loss = records.empty() ? 0.0 : records.back().val_loss;
    const ModelCheckpoint ckpt = checkpoint_from_model(model, ModelLineage{0, 0, ""}, meta);
    save_checkpoint(cfg.run_dir / "checkpoints" / "self.ckpt", ckpt);
    return ckpt;
}

}  // namespace eseg
