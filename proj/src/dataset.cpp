#include "wmhlab/dataset.hpp"

#include "wmhlab/volume_io.hpp"

#include <fstream>

namespace wmhlab::dataset {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

nlohmann::ordered_json phantom_config_to_json(const phantom::PhantomConfig& cfg) {
    ordered_json j;
    j["dims"] = {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz};
    j["spacing"] = {cfg.spacing[0], cfg.spacing[1], cfg.spacing[2]};
    j["background_mean"] = cfg.background_mean;
    j["background_std"] = cfg.background_std;
    j["lesion_count_mean"] = cfg.lesion_count_mean;
    j["lesion_radius_log_mean"] = cfg.lesion_radius_log_mean;
    j["lesion_radius_log_std"] = cfg.lesion_radius_log_std;
    j["lesion_intensity_mean"] = cfg.lesion_intensity_mean;
    j["lesion_intensity_std"] = cfg.lesion_intensity_std;
    j["smoothing_sigma"] = cfg.smoothing_sigma;
    j["noise_std"] = cfg.noise_std;
    j["confounder_rho"] = cfg.confounder_rho;
    j["annotation_policy"] = {
        {"kind", cfg.annotation_policy.kind == phantom::AnnotationPolicy::Kind::exact ? "exact"
                                                                                      : "threshold"},
        {"threshold", cfg.annotation_policy.threshold}};
    j["domain_tag"] = cfg.domain_tag;
    j["master_seed"] = cfg.master_seed;
    return j;
}

phantom::PhantomConfig phantom_config_from_json(const nlohmann::ordered_json& j) {
    phantom::PhantomConfig cfg;
    try {
        if (j.contains("dims"))
            cfg.dims = {j["dims"].at(0).get<int>(), j["dims"].at(1).get<int>(),
                        j["dims"].at(2).get<int>()};
        if (j.contains("spacing"))
            cfg.spacing = {j["spacing"].at(0).get<double>(), j["spacing"].at(1).get<double>(),
                           j["spacing"].at(2).get<double>()};
        auto get = [&](const char* key, double& dst) {
            if (j.contains(key)) dst = j.at(key).get<double>();
        };
        get("background_mean", cfg.background_mean);
        get("background_std", cfg.background_std);
        get("lesion_count_mean", cfg.lesion_count_mean);
        get("lesion_radius_log_mean", cfg.lesion_radius_log_mean);
        get("lesion_radius_log_std", cfg.lesion_radius_log_std);
        get("lesion_intensity_mean", cfg.lesion_intensity_mean);
        get("lesion_intensity_std", cfg.lesion_intensity_std);
        get("smoothing_sigma", cfg.smoothing_sigma);
        get("noise_std", cfg.noise_std);
        get("confounder_rho", cfg.confounder_rho);
        if (j.contains("annotation_policy")) {
            const auto& ap = j.at("annotation_policy");
            const std::string kind = ap.at("kind").get<std::string>();
            if (kind == "exact") {
                cfg.annotation_policy = phantom::AnnotationPolicy::exact();
            } else if (kind == "threshold") {
                cfg.annotation_policy =
                    phantom::AnnotationPolicy::thresholded(ap.at("threshold").get<double>());
            } else {
                throw ConfigError("unknown annotation policy kind: " + kind);
            }
        }
        if (j.contains("domain_tag")) cfg.domain_tag = j.at("domain_tag").get<std::string>();
        if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    } catch (const ordered_json::exception& e) {
        throw ConfigError(std::string("phantom config: malformed JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

DatasetManifest generate_dataset(const phantom::PhantomConfig& config, int n_scans,
                                 const fs::path& out_dir, bool overwrite) {
    config.validate();
    if (n_scans < 0) throw ConfigError("generate_dataset: n_scans must be >= 0");
    if (fs::exists(out_dir) && !fs::is_directory(out_dir))
        throw DataError("generate_dataset: output path is not a directory: " + out_dir.string());
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !overwrite)
        throw DataError("generate_dataset: output dir not empty (pass overwrite): " + out_dir.string());
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.domain_tag = config.domain_tag;
    manifest.config = config;
    manifest.scans.resize(static_cast<std::size_t>(n_scans));

    std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_scans; ++i) {
        try {
            const phantom::ScanRecord rec = phantom::generate_scan(config, i);
            ManifestScan entry;
            entry.scan_id = rec.scan_id;
            entry.seed = rec.seed;
            entry.label_volume_voxels = rec.label_volume_voxels;
            entry.confounders = rec.confounders;
            entry.image_file = rec.scan_id + "_img.wmhv";
            entry.true_mask_file = rec.scan_id + "_truemask.wmhv";
            entry.annotated_mask_file = rec.scan_id + "_annmask.wmhv";
            save_volume(rec.image, out_dir / entry.image_file);
            save_mask(rec.true_mask, out_dir / entry.true_mask_file);
            save_mask(rec.annotated_mask, out_dir / entry.annotated_mask_file);
            manifest.scans[static_cast<std::size_t>(i)] = std::move(entry);
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);

    ordered_json j;
    j["format_version"] = manifest.format_version;
    j["domain_tag"] = manifest.domain_tag;
    j["config"] = phantom_config_to_json(config);
    ordered_json scans = ordered_json::array();
    for (const ManifestScan& s : manifest.scans) {
        scans.push_back({{"scan_id", s.scan_id},
                         {"seed", s.seed},
                         {"label_volume_voxels", s.label_volume_voxels},
                         {"confounders",
                          {{"ventricle_vox", s.confounders.ventricle_vox},
                           {"white_matter_vox", s.confounders.white_matter_vox},
                           {"csf_vox", s.confounders.csf_vox}}},
                         {"files",
                          {{"image", s.image_file},
                           {"true_mask", s.true_mask_file},
                           {"annotated_mask", s.annotated_mask_file}}}});
    }
    j["scans"] = scans;

    std::ofstream out(out_dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + out_dir.string());
    out << j.dump(2) << '\n';
    return manifest;
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
    const fs::path path = dataset_dir / "manifest.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed manifest JSON: " + path.string());

    DatasetManifest manifest;
    try {
        manifest.format_version = j.at("format_version").get<int>();
        if (manifest.format_version != 1)
            throw DataError("unsupported manifest format_version in " + path.string());
        manifest.domain_tag = j.at("domain_tag").get<std::string>();
        manifest.config = phantom_config_from_json(j.at("config"));
        for (const auto& s : j.at("scans")) {
            ManifestScan scan;
            scan.scan_id = s.at("scan_id").get<std::string>();
            scan.seed = s.at("seed").get<std::uint64_t>();
            scan.label_volume_voxels = s.at("label_volume_voxels").get<std::int64_t>();
            scan.confounders.ventricle_vox = s.at("confounders").at("ventricle_vox").get<std::int64_t>();
            scan.confounders.white_matter_vox =
                s.at("confounders").at("white_matter_vox").get<std::int64_t>();
            scan.confounders.csf_vox = s.at("confounders").at("csf_vox").get<std::int64_t>();
            scan.image_file = s.at("files").at("image").get<std::string>();
            scan.true_mask_file = s.at("files").at("true_mask").get<std::string>();
            scan.annotated_mask_file = s.at("files").at("annotated_mask").get<std::string>();
            manifest.scans.push_back(std::move(scan));
        }
    } catch (const ordered_json::exception& e) {
        throw DataError("manifest: missing or malformed field in " + path.string() + ": " + e.what());
    }
    return manifest;
}

Volume3D load_scan_image(const fs::path& dataset_dir, const ManifestScan& scan) {
    return load_volume(dataset_dir / scan.image_file);
}

Mask3D load_scan_annotated_mask(const fs::path& dataset_dir, const ManifestScan& scan) {
    return load_mask(dataset_dir / scan.annotated_mask_file);
}

Mask3D load_scan_true_mask(const fs::path& dataset_dir, const ManifestScan& scan) {
    return load_mask(dataset_dir / scan.true_mask_file);
}

} // namespace wmhlab::dataset
