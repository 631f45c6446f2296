#pragma once

#include "wmhlab/volume.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace wmhlab::phantom {

struct AnnotationPolicy {
    enum class Kind { exact, threshold };
    Kind kind = Kind::exact;
    double threshold = 0.0; // applies to percentile-normalized intensities

    static AnnotationPolicy exact() { return {Kind::exact, 0.0}; }
    static AnnotationPolicy thresholded(double t) { return {Kind::threshold, t}; }
};

// All knobs of the synthetic lesion-scan model. Scans are a pure function of
// (config, scan_index); the domain knobs (morphology, intensity, noise,
// annotation policy) emulate acquisition and etiology shifts between sites.
struct PhantomConfig {
    kern::Dims3 dims{48, 48, 16};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    double background_mean = 0.6;   // per-scan tissue brightness
    double background_std = 0.03;
    double lesion_count_mean = 6.0; // Poisson
    double lesion_radius_log_mean = 0.788; // lognormal over the base radius, voxels (~2.2)
    double lesion_radius_log_std = 0.30;
    double lesion_intensity_mean = 0.30; // hyperintense offset over tissue
    double lesion_intensity_std = 0.05;
    double smoothing_sigma = 0.6; // voxels
    double noise_std = 0.02;
    double confounder_rho = 0.4; // target corr(confounder volume, lesion volume)
    AnnotationPolicy annotation_policy = AnnotationPolicy::thresholded(0.54);
    std::string domain_tag = "local";
    std::uint64_t master_seed = 0;

    void validate() const; // throws ConfigError
};

struct Confounders {
    std::int64_t ventricle_vox = 0;
    std::int64_t white_matter_vox = 0;
    std::int64_t csf_vox = 0;
};

struct ScanRecord {
    Volume3D image;
    Mask3D true_mask;
    Mask3D annotated_mask;
    std::int64_t label_volume_voxels = 0; // always volume_from_mask(annotated_mask).voxels
    Confounders confounders;
    std::string domain_tag;
    std::string scan_id;
    std::uint64_t seed = 0;
};

// internals exposed for test oracles
struct GenDetails {
    int lesions_drawn = 0;
    double drawn_volume_proxy = 0.0; // analytic total of the drawn ellipsoid volumes
    Mask3D wm_region;                // the region the threshold annotation is restricted to
    Volume3D prenoise_image;         // smoothed image before the noise step
    Volume3D lesion_field;           // smoothed lesion contribution alone
};

ScanRecord generate_scan(const PhantomConfig& config, int scan_index,
                         GenDetails* details = nullptr);

// exact -> copy of true_mask. threshold(t) -> percentile-normalized intensity
// > t, restricted to `region` when given, minus 26-connected components
// smaller than 3 voxels (rater-cleanup analog).
Mask3D annotate(const Volume3D& image, const Mask3D& true_mask, const AnnotationPolicy& policy,
                const Mask3D* region = nullptr);

// drops 26-connected components with fewer than min_voxels voxels
Mask3D remove_small_components(const Mask3D& mask, int min_voxels);

// Named presets: the training distribution plus four shifted evaluation
// domains. The training domain uses the thresholded annotation policy; the
// shifted domains use exact (expert-rater analog) annotations.
std::vector<std::pair<std::string, PhantomConfig>> domain_presets();

// returns the preset configured for `name`; throws ConfigError when unknown
PhantomConfig preset_by_name(const std::string& name);

} // namespace wmhlab::phantom
