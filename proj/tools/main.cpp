// ensembleseg command-line entry point.
//
// Commands:
//   plan      print the level schedule for a given S_1 and unlabeled count
//   train     run the semi-supervised pipeline or a baseline from a config
//   evaluate  score a checkpoint against an image/mask directory
//   fuse      offline weighted fusion of probability maps
//   synth     generate a synthetic dataset
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
// ENSEMBLESEG_SEED overrides the config seed.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include <unistd.h>

#include "ensembleseg/image_io.hpp"
#include "ensembleseg/metrics.hpp"
#include "ensembleseg/pipeline.hpp"

namespace {

using nlohmann::json;
using namespace eseg;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw UsageError("config: " + where + " must be an object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw UsageError("config: unknown key '" + item.key() + "' in " + where);
        }
    }
}

TrainConfig parse_train_config(const json& j, const std::string& where, TrainConfig defaults) {
    check_keys(j,
               {"max_epochs", "batch_size", "learning_rate", "dropout_rate",
                "early_stop_patience", "unnormalized_loss_weights"},
               where);
    TrainConfig cfg = defaults;
    if (j.contains("max_epochs")) cfg.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("dropout_rate")) cfg.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("early_stop_patience")) {
        if (j.at("early_stop_patience").is_null()) {
            cfg.early_stop_patience.reset();
        } else {
            cfg.early_stop_patience = j.at("early_stop_patience").get<int>();
        }
    }
    if (j.contains("unnormalized_loss_weights")) {
        cfg.unnormalized_loss_weights = j.at("unnormalized_loss_weights").get<bool>();
    }
    return cfg;
}

// Full-scale defaults; a config file overrides them field by field.
ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.s1 = 16;
    cfg.backbone = BackboneConfig{};  // depth 5, root 16, 128x128x3, dropout 0.25
    cfg.train_initial = TrainConfig{200, 10, 1e-4, 0.25, 5, 0, false};
    cfg.train_submodel = TrainConfig{50, 1, 1e-4, 0.0, 5, 0, false};
    cfg.train_fs = TrainConfig{200, 10, 1e-4, 0.25, std::nullopt, 0, false};
    cfg.self_training.iterations = 3;
    cfg.self_training.train = TrainConfig{50, 28, 1e-4, 0.25, std::nullopt, 0, false};
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config file not found: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UsageError("config: invalid JSON in " + path.string() + ": " + e.what());
    }
    check_keys(j,
               {"run_dir", "seed", "s1", "workers", "verbosity", "foreground_class", "threshold",
                "data", "split", "backbone", "train_initial", "train_submodel", "train_fs",
                "self_training"},
               "top level");

    ExperimentConfig cfg = default_experiment_config();
    if (j.contains("run_dir")) cfg.run_dir = j.at("run_dir").get<std::string>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("s1")) cfg.s1 = j.at("s1").get<int>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("verbosity")) cfg.verbosity = j.at("verbosity").get<int>();
    if (j.contains("foreground_class")) {
        cfg.foreground_class = j.at("foreground_class").get<int>();
    }
    if (j.contains("threshold")) cfg.threshold = j.at("threshold").get<double>();

    bool synth_seed_given = false, split_seed_given = false;
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"mode", "synthetic", "image_dir", "mask_dir"}, "data");
        if (d.contains("mode")) {
            const std::string mode = d.at("mode").get<std::string>();
            if (mode == "synthetic") {
                cfg.data_mode = ExperimentConfig::DataMode::kSynthetic;
            } else if (mode == "directory") {
                cfg.data_mode = ExperimentConfig::DataMode::kDirectory;
            } else {
                throw UsageError("config: data.mode must be 'synthetic' or 'directory'");
            }
        }
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            check_keys(s, {"count", "image_size", "min_blobs", "max_blobs", "contrast", "noise",
                           "seed"},
                       "data.synthetic");
            if (s.contains("count")) cfg.synthetic.count = s.at("count").get<int>();
            if (s.contains("image_size")) cfg.synthetic.image_size = s.at("image_size").get<int>();
            if (s.contains("min_blobs")) cfg.synthetic.min_blobs = s.at("min_blobs").get<int>();
            if (s.contains("max_blobs")) cfg.synthetic.max_blobs = s.at("max_blobs").get<int>();
            if (s.contains("contrast")) cfg.synthetic.contrast = s.at("contrast").get<double>();
            if (s.contains("noise")) cfg.synthetic.noise = s.at("noise").get<double>();
            if (s.contains("seed")) {
                cfg.synthetic.seed = s.at("seed").get<std::uint64_t>();
                synth_seed_given = true;
            }
        }
        if (d.contains("image_dir")) cfg.image_dir = d.at("image_dir").get<std::string>();
        if (d.contains("mask_dir")) cfg.mask_dir = d.at("mask_dir").get<std::string>();
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        check_keys(s, {"test_fraction", "labeled_count", "validation_count", "seed"}, "split");
        if (s.contains("test_fraction")) {
            cfg.split.test_fraction = s.at("test_fraction").get<double>();
        }
        if (s.contains("labeled_count")) cfg.split.labeled_count = s.at("labeled_count").get<int>();
        if (s.contains("validation_count")) {
            cfg.split.validation_count = s.at("validation_count").get<int>();
        }
        if (s.contains("seed")) {
            cfg.split.seed = s.at("seed").get<std::uint64_t>();
            split_seed_given = true;
        }
    }
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        check_keys(b, {"depth", "root_features", "classes", "dropout_rate", "input_size",
                       "in_channels"},
                   "backbone");
        if (b.contains("depth")) cfg.backbone.depth = b.at("depth").get<int>();
        if (b.contains("root_features")) {
            cfg.backbone.root_features = b.at("root_features").get<int>();
        }
        if (b.contains("classes")) cfg.backbone.classes = b.at("classes").get<int>();
        if (b.contains("dropout_rate")) {
            cfg.backbone.dropout_rate = b.at("dropout_rate").get<double>();
        }
        if (b.contains("input_size")) cfg.backbone.input_size = b.at("input_size").get<int>();
        if (b.contains("in_channels")) cfg.backbone.in_channels = b.at("in_channels").get<int>();
    }
    if (j.contains("train_initial")) {
        cfg.train_initial = parse_train_config(j.at("train_initial"), "train_initial",
                                               cfg.train_initial);
    }
    if (j.contains("train_submodel")) {
        cfg.train_submodel = parse_train_config(j.at("train_submodel"), "train_submodel",
                                                cfg.train_submodel);
    }
    if (j.contains("train_fs")) {
        cfg.train_fs = parse_train_config(j.at("train_fs"), "train_fs", cfg.train_fs);
    }
    if (j.contains("self_training")) {
        const json& s = j.at("self_training");
        check_keys(s, {"iterations", "train"}, "self_training");
        if (s.contains("iterations")) {
            cfg.self_training.iterations = s.at("iterations").get<int>();
        }
        if (s.contains("train")) {
            cfg.self_training.train = parse_train_config(s.at("train"), "self_training.train",
                                                         cfg.self_training.train);
        }
    }

    if (const char* env = std::getenv("ENSEMBLESEG_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw UsageError("ENSEMBLESEG_SEED is not an unsigned integer");
        }
    }
    if (cfg.data_mode == ExperimentConfig::DataMode::kDirectory) {
        for (const auto& dir : {cfg.image_dir, cfg.mask_dir}) {
            if (!std::filesystem::is_directory(dir)) {
                throw UsageError("config: referenced directory does not exist: " + dir.string());
            }
        }
    }
    if (!synth_seed_given) cfg.synthetic.seed = derive_seed(cfg.seed, "synth");
    if (!split_seed_given) cfg.split.seed = derive_seed(cfg.seed, "split");

    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

// Exclusive ownership of a run directory; a lock left by a dead process is
// taken over.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir)
        : path_(run_dir / ".lock") {
        std::filesystem::create_directories(run_dir);
        if (std::filesystem::exists(path_)) {
            std::ifstream in(path_);
            pid_t pid = 0;
            in >> pid;
            if (pid > 0 && (kill(pid, 0) == 0 || errno != ESRCH)) {
                throw std::runtime_error("run directory is locked by live process " +
                                         std::to_string(pid) + " (" + path_.string() + ")");
            }
        }
        std::ofstream out(path_, std::ios::trunc);
        out << getpid() << "\n";
        held_ = true;
    }
    ~RunLock() {
        if (held_) {
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
    bool held_ = false;
};

int cmd_plan(int s1, int n0, bool as_json) {
    const LevelPlan plan = plan_levels(s1, n0);
    if (as_json) {
        json j;
        j["n0"] = plan.n0;
        j["levels"] = json::array();
        for (const LevelSpec& spec : plan.levels) {
            j["levels"].push_back({{"level", spec.level_index},
                                   {"submodels", spec.submodel_count},
                                   {"subset_size", spec.subset_size}});
        }
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "level  submodels  subset_size\n";
        for (const LevelSpec& spec : plan.levels) {
            std::printf("%-6d %-10d %d\n", spec.level_index, spec.submodel_count,
                        spec.subset_size);
        }
        std::cout << "unlabeled total: " << plan.n0 << "\n";
    }
    return kExitOk;
}

MetricsReport evaluate_checkpoint(const ModelCheckpoint& ckpt, const std::vector<Sample>& test,
                                  double threshold, int foreground_class) {
    auto model = std::make_shared<Backbone<float>>(model_from_checkpoint(ckpt));
    return evaluate([model](const RasterImage& img) { return model->predict(img); }, test,
                    threshold, foreground_class);
}

int cmd_train(const std::filesystem::path& config_path, const std::string& mode, bool resume) {
    if (mode != "semi" && mode != "fs" && mode != "self-train") {
        throw UsageError("unknown mode '" + mode + "'; expected semi, fs or self-train");
    }
    const ExperimentConfig cfg = load_experiment_config(config_path);
    RunLock lock(cfg.run_dir);
    DatasetSplit data = prepare_data(cfg);
    std::filesystem::create_directories(cfg.run_dir / "reports");

    MetricsReport report;
    const auto start = std::chrono::steady_clock::now();
    if (mode == "semi") {
        SemiSupervisedResult result = run_semi_supervised(cfg, data, resume);
        if (result.manifest.final_checkpoint.empty()) {
            std::cout << "stopped before the final level (stop_after_level hook)\n";
            return kExitOk;
        }
        report = evaluate_checkpoint(result.final_model, data.test, cfg.threshold,
                                     cfg.foreground_class);
        report.method = "semi";
        report.seconds = result.manifest.total_seconds;
    } else if (mode == "fs") {
        const ModelCheckpoint ckpt = run_fully_supervised(cfg, data.labeled, data.validation);
        report = evaluate_checkpoint(ckpt, data.test, cfg.threshold, cfg.foreground_class);
        report.method = "fs";
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count();
    } else {
        const ModelCheckpoint ckpt = run_self_training_baseline(cfg, data);
        report = evaluate_checkpoint(ckpt, data.test, cfg.threshold, cfg.foreground_class);
        report.method = "self-train";
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count();
    }

    const std::string stem = report.method == "self-train" ? "self_train" : report.method;
    report_to_json_file(cfg.run_dir / "reports" / (stem + ".json"), report);
    report_to_csv_file(cfg.run_dir / "reports" / (stem + ".csv"), report);
    std::cout << report.method << ": test dice " << report.dice_stat.mean << " +- "
              << report.dice_stat.stddev << " over " << report.sample_count << " images\n";
    return kExitOk;
}

int cmd_evaluate(const std::filesystem::path& checkpoint_path,
                 const std::filesystem::path& data_dir, const std::filesystem::path& out_path,
                 double threshold, const std::string& method) {
    const ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);
    std::vector<Sample> raw = load_dataset(data_dir / "images", data_dir / "masks");
    std::vector<Sample> test;
    test.reserve(raw.size());
    for (Sample& s : raw) {
        PreprocessResult pre = preprocess(s.image, s.mask, ckpt.config.input_size);
        Sample p;
        p.id = std::move(s.id);
        p.image = std::move(pre.image);
        p.mask = std::move(pre.mask);
        test.push_back(std::move(p));
    }
    MetricsReport report = evaluate_checkpoint(ckpt, test, threshold, 1);
    report.method = method;
    report_to_json_file(out_path, report);
    std::filesystem::path csv = out_path;
    csv.replace_extension(".csv");
    report_to_csv_file(csv, report);
    std::cout << "dice " << report.dice_stat.mean << " +- " << report.dice_stat.stddev << " ("
              << report.sample_count << " images)\n";
    return kExitOk;
}

int cmd_fuse(const std::filesystem::path& maps_dir, const std::filesystem::path& out_dir,
             int foreground_class, double threshold) {
    if (!std::filesystem::is_directory(maps_dir)) {
        throw IoError("maps directory does not exist: " + maps_dir.string());
    }
    // Sub-directories are treated as one model each (files <id>.pmap); a flat
    // directory of .pmap files is single-model identity fusion per file.
    std::vector<std::filesystem::path> model_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(maps_dir)) {
        if (entry.is_directory()) model_dirs.push_back(entry.path());
    }
    std::sort(model_dirs.begin(), model_dirs.end());

    std::map<std::string, std::vector<std::filesystem::path>> groups;
    if (model_dirs.empty()) {
        for (const auto& entry : std::filesystem::directory_iterator(maps_dir)) {
            if (entry.path().extension() == ".pmap") {
                groups[entry.path().stem().string()].push_back(entry.path());
            }
        }
    } else {
        for (const auto& dir : model_dirs) {
            for (const auto& entry : std::filesystem::directory_iterator(dir)) {
                if (entry.path().extension() == ".pmap") {
                    groups[entry.path().stem().string()].push_back(entry.path());
                }
            }
        }
        for (const auto& [id, paths] : groups) {
            if (paths.size() != model_dirs.size()) {
                throw IoError("image '" + id + "' has maps in only " +
                              std::to_string(paths.size()) + " of " +
                              std::to_string(model_dirs.size()) + " model directories");
            }
        }
    }
    if (groups.empty()) throw IoError("no .pmap files under " + maps_dir.string());

    std::filesystem::create_directories(out_dir);
    json weights = json::object();
    for (const auto& [id, paths] : groups) {
        std::vector<ProbMap> maps;
        maps.reserve(paths.size());
        for (const auto& p : paths) maps.push_back(load_probmap(p));
        try {
            const PseudoLabel fused = fuse_ensemble(maps, foreground_class, threshold);
            save_probmap(out_dir / (id + ".pmap"), fused.map);
            weights[id] = fused.weights_used.values;
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("fusion failed for image '" + id + "': " + e.what());
        }
    }
    std::ofstream out(out_dir / "weights.json", std::ios::trunc);
    out << weights.dump(2) << "\n";
    std::cout << "fused " << groups.size() << " images\n";
    return kExitOk;
}

int cmd_synth(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir) {
    std::ifstream in(spec_path);
    if (!in) throw UsageError("spec file not found: " + spec_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UsageError("synth: invalid JSON: " + std::string(e.what()));
    }
    check_keys(j, {"count", "image_size", "min_blobs", "max_blobs", "contrast", "noise", "seed"},
               "synth spec");
    SyntheticSpec spec;
    if (j.contains("count")) spec.count = j.at("count").get<int>();
    if (j.contains("image_size")) spec.image_size = j.at("image_size").get<int>();
    if (j.contains("min_blobs")) spec.min_blobs = j.at("min_blobs").get<int>();
    if (j.contains("max_blobs")) spec.max_blobs = j.at("max_blobs").get<int>();
    if (j.contains("contrast")) spec.contrast = j.at("contrast").get<double>();
    if (j.contains("noise")) spec.noise = j.at("noise").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    try {
        spec.validate();
        // default backbone depth is 5; keep generated data compatible with it
        if (spec.image_size % 16 != 0) {
            throw std::invalid_argument("synth: image_size must be divisible by 16");
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    synth_write(out_dir, synth_generate(spec));
    std::cout << "wrote " << spec.count << " image/mask pairs to " << out_dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ensemble-based semi-supervised segmentation"};
    app.require_subcommand(1);

    auto* plan = app.add_subcommand("plan", "print the level schedule");
    int s1 = 16, n0 = 0;
    bool plan_json = false;
    plan->add_option("--s1", s1, "sub-model count at level 1 (power of two)")->required();
    plan->add_option("--n0", n0, "total unlabeled image count")->required();
    plan->add_flag("--json", plan_json, "emit JSON");

    auto* train = app.add_subcommand("train", "run training from a config file");
    std::string config_path, mode = "semi";
    bool resume = false;
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--mode", mode, "semi | fs | self-train");
    train->add_flag("--resume", resume, "resume an interrupted run");

    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
    std::string ckpt_path, data_dir, out_path = "report.json", method = "model";
    double threshold = 0.5;
    evaluate->add_option("--checkpoint", ckpt_path, "checkpoint (.ckpt)")->required();
    evaluate->add_option("--data", data_dir, "dataset dir with images/ and masks/")->required();
    evaluate->add_option("--out", out_path, "output report JSON path");
    evaluate->add_option("--threshold", threshold, "foreground threshold");
    evaluate->add_option("--method", method, "method name for the report");

    auto* fuse = app.add_subcommand("fuse", "fuse probability maps offline");
    std::string maps_dir, fuse_out;
    int fg_class = 1;
    double fuse_threshold = 0.5;
    fuse->add_option("--maps", maps_dir, "directory of .pmap files (or one subdir per model)")
        ->required();
    fuse->add_option("--out", fuse_out, "output directory")->required();
    fuse->add_option("--foreground-class", fg_class, "foreground class index");
    fuse->add_option("--threshold", fuse_threshold, "binarization threshold");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string spec_path, synth_out;
    synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    synth->add_option("--out", synth_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*plan) return cmd_plan(s1, n0, plan_json);
        if (*train) return cmd_train(config_path, mode, resume);
        if (*evaluate) return cmd_evaluate(ckpt_path, data_dir, out_path, threshold, method);
        if (*fuse) return cmd_fuse(maps_dir, fuse_out, fg_class, fuse_threshold);
        if (*synth) return cmd_synth(spec_path, synth_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
