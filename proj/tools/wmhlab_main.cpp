// wmhlab command-line front end. Exit codes: 0 success, 2 configuration
// errors, 3 data errors, 4 training aborts.

#include "wmhlab/experiment.hpp"
#include "wmhlab/volume_io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace wmhlab;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTrainAbort = 4;

void apply_thread_cap() {
#ifdef _OPENMP
    if (const char* env = std::getenv("WMHLAB_THREADS")) {
        const int threads = std::atoi(env);
        if (threads > 0) omp_set_num_threads(threads);
    }
#endif
}

ordered_json load_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed JSON in " + path.string());
    return j;
}

int cmd_generate(const std::string& config_path, const std::string& out_dir, bool overwrite) {
    const ordered_json j = load_json_file(config_path);
    phantom::PhantomConfig cfg;
    if (j.contains("preset")) {
        cfg = phantom::preset_by_name(j.at("preset").get<std::string>());
        ordered_json merged = dataset::phantom_config_to_json(cfg);
        for (auto& [key, value] : j.items())
            if (key != "preset" && key != "n_scans") merged[key] = value;
        cfg = dataset::phantom_config_from_json(merged);
    } else {
        cfg = dataset::phantom_config_from_json(j);
    }
    if (!j.contains("n_scans")) throw ConfigError("generate config: n_scans is required");
    const int n_scans = j.at("n_scans").get<int>();
    const dataset::DatasetManifest manifest =
        dataset::generate_dataset(cfg, n_scans, out_dir, overwrite);
    std::cout << "wrote " << manifest.scans.size() << " scans to " << out_dir << "\n";
    return 0;
}

train::TrainConfig train_config_from_file(const std::string& path) {
    train::TrainConfig tc;
    if (path.empty()) return tc;
    const ordered_json j = load_json_file(path);
    if (j.contains("batch_size")) tc.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_epochs")) tc.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("patience")) tc.patience = j.at("patience").get<int>();
    if (j.contains("base_filters")) tc.base_filters = j.at("base_filters").get<int>();
    if (j.contains("volume_scale")) tc.volume_scale = j.at("volume_scale").get<double>();
    if (j.contains("split_seed")) tc.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (j.contains("augmentation")) {
        const auto& aug = j.at("augmentation");
        if (aug.contains("translate_frac"))
            tc.augmentation.translate_frac = aug.at("translate_frac").get<double>();
        if (aug.contains("rotate_deg")) tc.augmentation.rotate_deg = aug.at("rotate_deg").get<double>();
        if (aug.contains("flip_x")) tc.augmentation.flip_x = aug.at("flip_x").get<bool>();
    }
    return tc;
}

int cmd_train(const std::string& data_dir, const std::string& variant, std::uint64_t seed,
              const std::string& out_ckpt, const std::string& config_path) {
    train::TrainConfig tc = train_config_from_file(config_path);
    tc.label_type = train::label_type_from_name(variant);
    tc.seed = seed;
    const train::TrainResult result = train::train(data_dir, tc);
    nnet::save_checkpoint(result.checkpoint, out_ckpt);
    train::write_history_csv(result.history, out_ckpt + ".history.csv");
    {
        ordered_json echo;
        echo["variant"] = variant;
        echo["seed"] = seed;
        echo["batch_size"] = tc.batch_size;
        echo["max_epochs"] = tc.max_epochs;
        echo["patience"] = tc.patience;
        echo["base_filters"] = tc.base_filters;
        echo["optimizer"] = {{"name", "adadelta"},
                             {"rho", tc.optimizer.rho},
                             {"epsilon", tc.optimizer.epsilon},
                             {"lr", tc.optimizer.lr}};
        echo["augmentation"] = {{"translate_frac", tc.augmentation.translate_frac},
                                {"rotate_deg", tc.augmentation.rotate_deg},
                                {"flip_x", tc.augmentation.flip_x}};
        echo["volume_scale"] = result.checkpoint.volume_scale;
        std::ofstream out(out_ckpt + ".train_config.json", std::ios::binary);
        out << echo.dump(2) << '\n';
    }
    std::cout << "checkpoint written to " << out_ckpt << " (best epoch " << result.best_epoch
              << ", " << result.history.size() << " epochs)\n";
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_csv,
                bool save_attention, const std::string& ids_file) {
    const nnet::Checkpoint ckpt = nnet::load_checkpoint(ckpt_path);
    infer::PredictOptions opts;
    opts.save_attention = save_attention;
    if (!ids_file.empty()) {
        std::ifstream in(ids_file);
        if (!in) throw DataError("cannot open ids file: " + ids_file);
        std::vector<std::string> ids;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ids.push_back(line);
        opts.ids = std::move(ids);
    }
    fs::path artifact_dir = fs::path(out_csv);
    artifact_dir.replace_extension();
    artifact_dir += "_masks";
    const infer::DatasetPrediction pred =
        infer::predict_dataset(ckpt, data_dir, artifact_dir, opts);
    infer::write_predictions_csv(pred.rows, out_csv);
    std::cout << "wrote " << pred.rows.size() << " predictions to " << out_csv << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_csv, const std::string& data_dir,
                 const std::string& out_json) {
    const std::vector<infer::PredictionRow> rows = infer::read_predictions_csv(pred_csv);
    const dataset::DatasetManifest manifest = dataset::load_manifest(data_dir);
    std::string variant = rows.empty() ? "unknown" : rows.front().variant;
    for (const auto& r : rows)
        if (r.variant != variant)
            throw DataError("evaluate: predictions mix variants; evaluate one CSV per variant");
    const metrics::MetricsReport report =
        experiment::compute_metrics_report(rows, manifest.domain_tag, variant, 0);
    experiment::write_metrics_report(report, out_json);
    std::cout << "metrics report written to " << out_json << "\n";
    return 0;
}

int cmd_confound(const std::string& pred_csv, const std::string& data_dir,
                 const std::string& out_json) {
    const std::vector<infer::PredictionRow> rows = infer::read_predictions_csv(pred_csv);
    const dataset::DatasetManifest manifest = dataset::load_manifest(data_dir);
    const stats::ConfounderReport report = experiment::confound_from_predictions(rows, manifest);
    experiment::write_confound_report(report, out_json);
    std::cout << "confound report written to " << out_json << "\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir) {
    const experiment::ExperimentConfig cfg = experiment::load_experiment_config(config_path);
    experiment::run_experiment(cfg, out_dir);
    std::cout << "experiment artifacts under " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& experiment_dir) {
    experiment::write_report(experiment_dir);
    std::cout << "report files written under " << experiment_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"weak- vs strong-label lesion volume quantification toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, variant = "weak", ckpt_path, pred_csv, ids_file;
    std::uint64_t seed = 0;
    bool overwrite = false, save_attention = false;

    CLI::App* generate = app.add_subcommand("generate", "generate a phantom dataset");
    generate->add_option("--config", config_path, "phantom config JSON")->required();
    generate->add_option("--out", out_path, "output dataset directory")->required();
    generate->add_flag("--overwrite", overwrite, "allow writing into a non-empty directory");

    CLI::App* train_cmd = app.add_subcommand("train", "train one network");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--variant", variant, "weak|strong|severity")->required();
    train_cmd->add_option("--seed", seed, "training seed");
    train_cmd->add_option("--out", out_path, "output checkpoint path")->required();
    train_cmd->add_option("--config", config_path, "training config JSON");

    CLI::App* predict = app.add_subcommand("predict", "predict volumes and masks for a dataset");
    predict->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    predict->add_option("--data", data_dir, "dataset directory")->required();
    predict->add_option("--out", out_path, "output predictions CSV")->required();
    predict->add_flag("--save-attention", save_attention, "save attention maps as WMHV1 volumes");
    predict->add_option("--ids", ids_file, "file with one scan id per line");

    CLI::App* evaluate = app.add_subcommand("evaluate", "agreement metrics for a predictions CSV");
    evaluate->add_option("--pred", pred_csv, "predictions CSV")->required();
    evaluate->add_option("--data", data_dir, "dataset directory")->required();
    evaluate->add_option("--out", out_path, "output metrics_report.json")->required();

    CLI::App* confound = app.add_subcommand("confound", "confounder-adjusted regression analysis");
    confound->add_option("--pred", pred_csv, "predictions CSV")->required();
    confound->add_option("--data", data_dir, "dataset directory")->required();
    confound->add_option("--out", out_path, "output confound_report.json")->required();

    CLI::App* experiment_cmd = app.add_subcommand("experiment", "run the full protocol");
    experiment_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    experiment_cmd->add_option("--out", out_path, "experiment output directory")->required();

    CLI::App* report = app.add_subcommand("report", "emit results tables and overlays");
    report->add_option("--experiment", data_dir, "experiment directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (generate->parsed()) return cmd_generate(config_path, out_path, overwrite);
        if (train_cmd->parsed()) return cmd_train(data_dir, variant, seed, out_path, config_path);
        if (predict->parsed())
            return cmd_predict(ckpt_path, data_dir, out_path, save_attention, ids_file);
        if (evaluate->parsed()) return cmd_evaluate(pred_csv, data_dir, out_path);
        if (confound->parsed()) return cmd_confound(pred_csv, data_dir, out_path);
        if (experiment_cmd->parsed()) return cmd_experiment(config_path, out_path);
        if (report->parsed()) return cmd_report(data_dir);
    } catch (const TrainAbortError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitTrainAbort;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
