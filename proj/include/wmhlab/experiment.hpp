#pragma once

#include "wmhlab/infer.hpp"
#include "wmhlab/metrics.hpp"
#include "wmhlab/stats.hpp"
#include "wmhlab/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace wmhlab::experiment {

// One config drives the full protocol: generate (or reuse) the phantom
// domains, train both variants with n_seeds initializations on the training
// domain, evaluate on the held-out test split and every external domain.
struct ExperimentConfig {
    int version = 1;
    std::string training_domain = "local";
    std::vector<std::string> eval_domains{"few_large", "many_small", "bright_shift", "noisy"};
    std::map<std::string, int> n_scans; // per domain
    int n_seeds = 3;
    std::uint64_t base_seed = 1;
    std::uint64_t split_seed = 7;
    std::optional<kern::Dims3> dims_override;
    train::TrainConfig train_template; // label_type/seed/split_seed filled per run
    std::map<std::string, nlohmann::ordered_json> preset_overrides;

    void validate() const;
    phantom::PhantomConfig resolve_domain(const std::string& name) const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::ordered_json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

metrics::MetricsReport compute_metrics_report(const std::vector<infer::PredictionRow>& rows,
                                              const std::string& dataset_tag,
                                              const std::string& checkpoint_id, std::uint64_t seed);
void write_metrics_report(const metrics::MetricsReport& report, const std::filesystem::path& path);

// joins prediction rows with the manifest's confounder volumes by scan id
stats::ConfounderReport confound_from_predictions(const std::vector<infer::PredictionRow>& rows,
                                                  const dataset::DatasetManifest& manifest);
void write_confound_report(const stats::ConfounderReport& report,
                           const std::filesystem::path& path);

// Runs the full pipeline under out_root:
//   datasets/<domain>/ , runs/<variant>_seed<k>/ , preds/... , evals/...
// Training, label scaling and the split never see evaluation scans.
void run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_root);

// Emits results.csv, fig2_data.csv and the overlay exports from a finished
// experiment directory. Rerunning produces byte-identical files.
void write_report(const std::filesystem::path& experiment_root);

} // namespace wmhlab::experiment
