#pragma once

#include "wmhlab/phantom.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace wmhlab::dataset {

struct ManifestScan {
    std::string scan_id;
    std::uint64_t seed = 0;
    std::int64_t label_volume_voxels = 0;
    phantom::Confounders confounders;
    std::string image_file, true_mask_file, annotated_mask_file; // relative to the dataset dir
};

struct DatasetManifest {
    int format_version = 1;
    std::string domain_tag;
    phantom::PhantomConfig config;
    std::vector<ManifestScan> scans;
};

nlohmann::ordered_json phantom_config_to_json(const phantom::PhantomConfig& cfg);
phantom::PhantomConfig phantom_config_from_json(const nlohmann::ordered_json& j);

// Writes n_scans phantom scans plus manifest.json into out_dir. Refuses a
// non-empty out_dir unless overwrite is set. Regenerating with the same
// config produces byte-identical files.
DatasetManifest generate_dataset(const phantom::PhantomConfig& config, int n_scans,
                                 const std::filesystem::path& out_dir, bool overwrite = false);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

// scan file loaders relative to the dataset dir
Volume3D load_scan_image(const std::filesystem::path& dataset_dir, const ManifestScan& scan);
Mask3D load_scan_annotated_mask(const std::filesystem::path& dataset_dir, const ManifestScan& scan);
Mask3D load_scan_true_mask(const std::filesystem::path& dataset_dir, const ManifestScan& scan);

} // namespace wmhlab::dataset
