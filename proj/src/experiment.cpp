#include "wmhlab/experiment.hpp"

#include "wmhlab/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace wmhlab::experiment {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
    if (version != 1) throw ConfigError("experiment config: unsupported version");
    if (n_seeds < 1) throw ConfigError("experiment config: n_seeds must be >= 1");
    if (training_domain.empty()) throw ConfigError("experiment config: training domain required");
    for (const auto& [domain, count] : n_scans)
        if (count < 0) throw ConfigError("experiment config: n_scans must be >= 0 for " + domain);
    if (!n_scans.count(training_domain))
        throw ConfigError("experiment config: n_scans missing for the training domain");
    for (const std::string& d : eval_domains)
        if (!n_scans.count(d))
            throw ConfigError("experiment config: n_scans missing for eval domain " + d);
}

phantom::PhantomConfig resolve_with_overrides(const std::string& name,
                                              const std::map<std::string, ordered_json>& overrides,
                                              const std::optional<kern::Dims3>& dims_override) {
    phantom::PhantomConfig cfg = phantom::preset_by_name(name);
    auto it = overrides.find(name);
    if (it != overrides.end()) {
        ordered_json merged = dataset::phantom_config_to_json(cfg);
        for (auto& [key, value] : it->second.items()) merged[key] = value;
        cfg = dataset::phantom_config_from_json(merged);
    }
    if (dims_override) cfg.dims = *dims_override;
    cfg.validate();
    return cfg;
}

phantom::PhantomConfig ExperimentConfig::resolve_domain(const std::string& name) const {
    return resolve_with_overrides(name, preset_overrides, dims_override);
}

ExperimentConfig experiment_config_from_json(const ordered_json& j) {
    ExperimentConfig cfg;
    try {
        if (j.contains("version")) cfg.version = j.at("version").get<int>();
        if (j.contains("training_domain"))
            cfg.training_domain = j.at("training_domain").get<std::string>();
        if (j.contains("eval_domains"))
            cfg.eval_domains = j.at("eval_domains").get<std::vector<std::string>>();
        if (j.contains("n_scans"))
            for (auto& [key, value] : j.at("n_scans").items())
                cfg.n_scans[key] = value.get<int>();
        if (j.contains("n_seeds")) cfg.n_seeds = j.at("n_seeds").get<int>();
        if (j.contains("base_seed")) cfg.base_seed = j.at("base_seed").get<std::uint64_t>();
        if (j.contains("split_seed")) cfg.split_seed = j.at("split_seed").get<std::uint64_t>();
        if (j.contains("dims"))
            cfg.dims_override = kern::Dims3{j.at("dims").at(0).get<int>(),
                                            j.at("dims").at(1).get<int>(),
                                            j.at("dims").at(2).get<int>()};
        if (j.contains("train")) {
            const auto& t = j.at("train");
            if (t.contains("batch_size"))
                cfg.train_template.batch_size = t.at("batch_size").get<int>();
            if (t.contains("max_epochs"))
                cfg.train_template.max_epochs = t.at("max_epochs").get<int>();
            if (t.contains("patience")) cfg.train_template.patience = t.at("patience").get<int>();
            if (t.contains("base_filters"))
                cfg.train_template.base_filters = t.at("base_filters").get<int>();
            if (t.contains("volume_scale"))
                cfg.train_template.volume_scale = t.at("volume_scale").get<double>();
            if (t.contains("augmentation")) {
                const auto& aug = t.at("augmentation");
                if (aug.contains("translate_frac"))
                    cfg.train_template.augmentation.translate_frac =
                        aug.at("translate_frac").get<double>();
                if (aug.contains("rotate_deg"))
                    cfg.train_template.augmentation.rotate_deg = aug.at("rotate_deg").get<double>();
                if (aug.contains("flip_x"))
                    cfg.train_template.augmentation.flip_x = aug.at("flip_x").get<bool>();
            }
        }
        if (j.contains("preset_overrides"))
            for (auto& [key, value] : j.at("preset_overrides").items())
                cfg.preset_overrides[key] = value;
    } catch (const ordered_json::exception& e) {
        throw ConfigError(std::string("experiment config: malformed JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open experiment config: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed experiment config JSON: " + path.string());
    return experiment_config_from_json(j);
}

metrics::MetricsReport compute_metrics_report(const std::vector<infer::PredictionRow>& rows,
                                              const std::string& dataset_tag,
                                              const std::string& checkpoint_id,
                                              std::uint64_t seed) {
    metrics::MetricsReport report;
    report.dataset_tag = dataset_tag;
    report.checkpoint_id = checkpoint_id;
    report.seed = seed;

    std::vector<double> labels, preds;
    double dice_sum = 0.0;
    int dice_count = 0;
    for (const infer::PredictionRow& r : rows) {
        labels.push_back(r.label_volume_voxels);
        preds.push_back(r.pred_volume_voxels);
        report.dice_per_scan.push_back({r.scan_id, r.dice});
        if (std::isfinite(r.dice)) {
            dice_sum += r.dice;
            ++dice_count;
        }
    }
    report.dice_mean = dice_count ? dice_sum / dice_count : std::nan("");

    if (rows.size() >= 2) {
        metrics::RatingsMatrix m;
        m.n = static_cast<int>(rows.size());
        m.k = 2;
        m.values.resize(rows.size() * 2);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            m.values[2 * i] = labels[i];
            m.values[2 * i + 1] = preds[i];
        }
        report.icc_2_1 = metrics::icc_2_1(m);
        report.pearson = metrics::pearson(labels, preds);
        report.spearman = metrics::spearman(labels, preds);
        // coefficient of determination of the least-squares fit pred ~ label
        std::vector<std::vector<double>> design(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) design[i] = {1.0, labels[i]};
        try {
            report.r_squared = stats::ols_fit(design, preds).r_squared;
        } catch (const ConfigError&) {
            report.r_squared = 0.0; // degenerate label column
        }
    }
    return report;
}

namespace {

ordered_json json_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

} // namespace

void write_metrics_report(const metrics::MetricsReport& report, const fs::path& path) {
    ordered_json j;
    j["dataset_tag"] = report.dataset_tag;
    j["checkpoint_id"] = report.checkpoint_id;
    j["seed"] = report.seed;
    j["icc_2_1"] = report.icc_2_1 ? ordered_json(*report.icc_2_1) : ordered_json(nullptr);
    j["dice_mean"] = json_or_null(report.dice_mean);
    j["pearson"] = json_or_null(report.pearson);
    j["spearman"] = json_or_null(report.spearman);
    j["r_squared"] = json_or_null(report.r_squared);
    ordered_json per_scan = ordered_json::array();
    for (const auto& d : report.dice_per_scan)
        per_scan.push_back({{"scan_id", d.scan_id}, {"dice", json_or_null(d.dice)}});
    j["dice_per_scan"] = per_scan;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write metrics report: " + path.string());
    out << j.dump(2) << '\n';
}

stats::ConfounderReport confound_from_predictions(const std::vector<infer::PredictionRow>& rows,
                                                  const dataset::DatasetManifest& manifest) {
    std::map<std::string, const dataset::ManifestScan*> by_id;
    for (const auto& s : manifest.scans) by_id[s.scan_id] = &s;

    std::vector<double> pred, truth;
    stats::ConfounderVectors conf;
    for (const infer::PredictionRow& r : rows) {
        auto it = by_id.find(r.scan_id);
        if (it == by_id.end())
            throw DataError("confound: prediction scan id missing from manifest: " + r.scan_id);
        pred.push_back(r.pred_volume_voxels);
        truth.push_back(r.label_volume_voxels);
        conf.ventricle.push_back(static_cast<double>(it->second->confounders.ventricle_vox));
        conf.white_matter.push_back(static_cast<double>(it->second->confounders.white_matter_vox));
        conf.csf.push_back(static_cast<double>(it->second->confounders.csf_vox));
    }
    return stats::confounder_analysis(pred, truth, conf);
}

namespace {

ordered_json regression_to_json(const stats::RegressionResult& r,
                                const std::vector<std::string>& names) {
    ordered_json j;
    j["n"] = r.n;
    j["df"] = r.df;
    j["r_squared"] = r.r_squared;
    ordered_json coeffs = ordered_json::array();
    for (std::size_t i = 0; i < r.beta.size(); ++i) {
        coeffs.push_back({{"name", names[i]},
                          {"beta", r.beta[i]},
                          {"se", json_or_null(r.se[i])},
                          {"t", json_or_null(r.t[i])},
                          {"p", json_or_null(r.p[i])}});
    }
    j["coefficients"] = coeffs;
    return j;
}

} // namespace

void write_confound_report(const stats::ConfounderReport& report, const fs::path& path) {
    ordered_json j;
    j["model_truth_only"] =
        regression_to_json(report.model_truth_only, {"intercept", "truth"});
    j["model_with_confounders"] = regression_to_json(
        report.model_with_confounders,
        {"intercept", "truth", "ventricle_vox", "white_matter_vox", "csf_vox"});
    j["delta_r_squared"] = report.delta_r_squared;
    j["truth_p_only"] = json_or_null(report.truth_p_only);
    j["truth_p_adjusted"] = json_or_null(report.truth_p_adjusted);
    j["corr_truth_ventricle"] = report.corr_truth_ventricle;
    j["corr_truth_white_matter"] = report.corr_truth_white_matter;
    j["corr_truth_csf"] = report.corr_truth_csf;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write confound report: " + path.string());
    out << j.dump(2) << '\n';
}

namespace {

// reuse an existing dataset only when its manifest echoes the same config
void ensure_dataset(const phantom::PhantomConfig& cfg, int n_scans, const fs::path& dir) {
    if (fs::exists(dir / "manifest.json")) {
        const dataset::DatasetManifest existing = dataset::load_manifest(dir);
        const ordered_json want = dataset::phantom_config_to_json(cfg);
        const ordered_json have = dataset::phantom_config_to_json(existing.config);
        if (want == have && static_cast<int>(existing.scans.size()) == n_scans) return;
        throw DataError("experiment: dataset dir " + dir.string() +
                        " holds a different configuration; remove it or change the output root");
    }
    dataset::generate_dataset(cfg, n_scans, dir, false);
}

struct RunTag {
    train::LabelType label_type;
    std::uint64_t seed;
    std::string name;
};

std::vector<RunTag> run_tags(const ExperimentConfig& cfg) {
    std::vector<RunTag> tags;
    for (const train::LabelType lt : {train::LabelType::weak_volume, train::LabelType::strong_mask})
        for (int r = 0; r < cfg.n_seeds; ++r) {
            const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
            tags.push_back({lt, seed,
                            train::label_type_name(lt) + "_seed" + std::to_string(seed)});
        }
    return tags;
}

void write_split_json(const train::SplitManifest& split, const fs::path& path) {
    ordered_json j;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write split: " + path.string());
    out << j.dump(2) << '\n';
}

train::SplitManifest read_split_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open split: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed split JSON: " + path.string());
    train::SplitManifest split;
    split.train = j.at("train").get<std::vector<std::string>>();
    split.val = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
}

} // namespace

void run_experiment(const ExperimentConfig& config, const fs::path& out_root) {
    config.validate();
    fs::create_directories(out_root);

    // materialize every domain
    std::vector<std::string> all_domains{config.training_domain};
    all_domains.insert(all_domains.end(), config.eval_domains.begin(), config.eval_domains.end());
    for (const std::string& domain : all_domains)
        ensure_dataset(config.resolve_domain(domain), config.n_scans.at(domain),
                       out_root / "datasets" / domain);

    const fs::path train_dir = out_root / "datasets" / config.training_domain;
    const dataset::DatasetManifest train_manifest = dataset::load_manifest(train_dir);

    std::vector<std::string> ids;
    for (const auto& s : train_manifest.scans) ids.push_back(s.scan_id);
    const train::SplitManifest split = train::split_dataset(ids, config.split_seed);
    write_split_json(split, out_root / "split.json");

    {
        ordered_json echo;
        echo["training_domain"] = config.training_domain;
        echo["eval_domains"] = config.eval_domains;
        echo["n_seeds"] = config.n_seeds;
        echo["base_seed"] = config.base_seed;
        echo["split_seed"] = config.split_seed;
        std::ofstream out(out_root / "experiment_config_echo.json", std::ios::binary);
        out << echo.dump(2) << '\n';
    }

    for (const RunTag& tag : run_tags(config)) {
        const fs::path run_dir = out_root / "runs" / tag.name;
        if (fs::exists(run_dir / "done")) continue;
        fs::create_directories(run_dir);

        train::TrainConfig tc = config.train_template;
        tc.label_type = tag.label_type;
        tc.seed = tag.seed;
        tc.split_seed = config.split_seed;
        const train::TrainResult result =
            train::train_on_manifest(train_dir, train_manifest, tc, std::nullopt, split);
        nnet::save_checkpoint(result.checkpoint, run_dir / "checkpoint.wmhckpt");
        train::write_history_csv(result.history, run_dir / "history.csv");

        const nnet::Checkpoint& ckpt = result.checkpoint;
        const std::string ckpt_id = tag.name;

        // held-out local test split
        {
            const fs::path pred_dir = out_root / "preds" / tag.name;
            fs::create_directories(pred_dir);
            infer::PredictOptions opts;
            opts.ids = split.test;
            opts.save_attention = tag.label_type == train::LabelType::weak_volume;
            const infer::DatasetPrediction pred =
                infer::predict_dataset(ckpt, train_dir, pred_dir / "local_test_masks", opts);
            infer::write_predictions_csv(pred.rows, pred_dir / "local_test.csv");
            const metrics::MetricsReport report =
                compute_metrics_report(pred.rows, "local_test", ckpt_id, tag.seed);
            fs::create_directories(out_root / "evals" / tag.name);
            write_metrics_report(report,
                                 out_root / "evals" / tag.name / "local_test_metrics.json");
        }
        // external domains
        for (const std::string& domain : config.eval_domains) {
            const fs::path pred_dir = out_root / "preds" / tag.name;
            infer::PredictOptions opts;
            const infer::DatasetPrediction pred = infer::predict_dataset(
                ckpt, out_root / "datasets" / domain, pred_dir / (domain + "_masks"), opts);
            infer::write_predictions_csv(pred.rows, pred_dir / (domain + ".csv"));
            const metrics::MetricsReport report =
                compute_metrics_report(pred.rows, domain, ckpt_id, tag.seed);
            write_metrics_report(report,
                                 out_root / "evals" / tag.name / (domain + "_metrics.json"));
        }

        std::ofstream marker(run_dir / "done");
        marker << "ok\n";
    }

    write_report(out_root);
}

namespace {

double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    if (values.empty()) return std::nan("");
    if (values.size() == 1) return values[0];
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

struct EvalCell {
    double icc = std::nan("");
    double dice_mean = std::nan("");
};

Mask3D mask_contour(const Mask3D& mask) {
    Mask3D contour = Mask3D::zeros(mask.dims, mask.spacing);
    const kern::Dims3 d = mask.dims;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!mask.at(x, y, z)) continue;
                bool boundary = x == 0 || x == d.nx - 1 || y == 0 || y == d.ny - 1 || z == 0 ||
                                z == d.nz - 1;
                if (!boundary)
                    boundary = !mask.at(x - 1, y, z) || !mask.at(x + 1, y, z) ||
                               !mask.at(x, y - 1, z) || !mask.at(x, y + 1, z) ||
                               !mask.at(x, y, z - 1) || !mask.at(x, y, z + 1);
                if (boundary) contour.at(x, y, z) = 1;
            }
    return contour;
}

} // namespace

void write_report(const fs::path& root) {
    const ordered_json echo = [&] {
        std::ifstream in(root / "experiment_config_echo.json", std::ios::binary);
        if (!in) throw DataError("report: missing experiment_config_echo.json under " + root.string());
        ordered_json j = ordered_json::parse(in, nullptr, false);
        if (j.is_discarded()) throw DataError("report: malformed experiment echo");
        return j;
    }();
    const std::string training_domain = echo.at("training_domain").get<std::string>();
    const std::vector<std::string> eval_domains =
        echo.at("eval_domains").get<std::vector<std::string>>();
    const int n_seeds = echo.at("n_seeds").get<int>();
    const std::uint64_t base_seed = echo.at("base_seed").get<std::uint64_t>();

    std::vector<std::string> datasets{"local_test"};
    datasets.insert(datasets.end(), eval_domains.begin(), eval_domains.end());
    const std::vector<std::string> variants{"weak", "strong"};

    std::map<std::string, std::map<std::string, std::map<std::uint64_t, EvalCell>>> cells;
    for (const std::string& variant : variants)
        for (int r = 0; r < n_seeds; ++r) {
            const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(r);
            const std::string tag = variant + "_seed" + std::to_string(seed);
            for (const std::string& ds : datasets) {
                const fs::path path = root / "evals" / tag / (ds + "_metrics.json");
                std::ifstream in(path, std::ios::binary);
                if (!in) throw DataError("report: missing metrics file " + path.string());
                ordered_json j = ordered_json::parse(in, nullptr, false);
                if (j.is_discarded()) throw DataError("report: malformed metrics " + path.string());
                EvalCell cell;
                if (!j.at("icc_2_1").is_null()) cell.icc = j.at("icc_2_1").get<double>();
                if (!j.at("dice_mean").is_null()) cell.dice_mean = j.at("dice_mean").get<double>();
                cells[ds][variant][seed] = cell;
            }
        }

    char buf[256];
    {
        std::ofstream out(root / "results.csv", std::ios::binary);
        if (!out) throw DataError("report: cannot write results.csv");
        out << "dataset,variant,seed,icc,mean_dice\n";
        for (const std::string& ds : datasets)
            for (const std::string& variant : variants)
                for (int r = 0; r < n_seeds; ++r) {
                    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(r);
                    const EvalCell& c = cells[ds][variant][seed];
                    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.9g,%.9g\n", ds.c_str(),
                                  variant.c_str(), static_cast<unsigned long long>(seed), c.icc,
                                  c.dice_mean);
                    out << buf;
                }
    }
    {
        std::ofstream out(root / "fig2_data.csv", std::ios::binary);
        if (!out) throw DataError("report: cannot write fig2_data.csv");
        out << "dataset,variant,seed,icc,icc_p05,icc_p95\n";
        for (const std::string& ds : datasets)
            for (const std::string& variant : variants) {
                std::vector<double> iccs;
                for (auto& [seed, cell] : cells[ds][variant])
                    if (std::isfinite(cell.icc)) iccs.push_back(cell.icc);
                double lo = std::nan(""), hi = std::nan("");
                if (!iccs.empty()) {
                    if (iccs.size() <= 3) {
                        lo = *std::min_element(iccs.begin(), iccs.end());
                        hi = *std::max_element(iccs.begin(), iccs.end());
                    } else {
                        lo = quantile(iccs, 0.05);
                        hi = quantile(iccs, 0.95);
                    }
                }
                for (auto& [seed, cell] : cells[ds][variant]) {
                    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.9g,%.9g,%.9g\n", ds.c_str(),
                                  variant.c_str(), static_cast<unsigned long long>(seed), cell.icc,
                                  lo, hi);
                    out << buf;
                }
            }
    }

    // overlay exports: image + annotation contour + attention + both predicted masks
    const train::SplitManifest split = read_split_json(root / "split.json");
    const fs::path train_dir = root / "datasets" / training_domain;
    const dataset::DatasetManifest manifest = dataset::load_manifest(train_dir);
    const fs::path overlays = root / "overlays";
    fs::create_directories(overlays);
    const std::string weak_tag = "weak_seed" + std::to_string(base_seed);
    const std::string strong_tag = "strong_seed" + std::to_string(base_seed);
    const std::size_t n_overlays = std::min<std::size_t>(2, split.test.size());
    for (std::size_t i = 0; i < n_overlays; ++i) {
        const std::string& id = split.test[i];
        const auto it = std::find_if(manifest.scans.begin(), manifest.scans.end(),
                                     [&](const auto& s) { return s.scan_id == id; });
        if (it == manifest.scans.end()) continue;
        save_volume(dataset::load_scan_image(train_dir, *it), overlays / (id + "_image.wmhv"));
        save_mask(mask_contour(dataset::load_scan_annotated_mask(train_dir, *it)),
                  overlays / (id + "_annotation_contour.wmhv"));
        const fs::path attention =
            root / "preds" / weak_tag / "local_test_masks" / (id + "_attention.wmhv");
        if (fs::exists(attention))
            fs::copy_file(attention, overlays / (id + "_attention.wmhv"),
                          fs::copy_options::overwrite_existing);
        const fs::path weak_mask =
            root / "preds" / weak_tag / "local_test_masks" / (id + "_predmask.wmhv");
        if (fs::exists(weak_mask))
            fs::copy_file(weak_mask, overlays / (id + "_weak_predmask.wmhv"),
                          fs::copy_options::overwrite_existing);
        const fs::path strong_mask =
            root / "preds" / strong_tag / "local_test_masks" / (id + "_predmask.wmhv");
        if (fs::exists(strong_mask))
            fs::copy_file(strong_mask, overlays / (id + "_strong_predmask.wmhv"),
                          fs::copy_options::overwrite_existing);
    }
}

} // namespace wmhlab::experiment
