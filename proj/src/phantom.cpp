// Synthetic lesion-scan generator. A scan is painted in a fixed draw order so
// generate_scan is a pure function of (config, scan_index):
//   1. per-scan tissue brightness, lesion shape/offset draws
//   2. confounder size factors coupled to the standardized drawn lesion burden
//   3. anatomy ellipsoids (white matter, ventricle pair, CSF shell, scalp rim)
//   4. voxel painting, Gaussian smoothing, counter-seeded noise
//   5. annotation via the configured policy
//
// The scalp rim is painted brighter than any lesion and covers >1% of the
// grid, so the 99th-percentile normalization anchor does not move with the
// lesion load and a fixed annotation threshold stays between the white-matter
// and lesion intensity bands.

#include "wmhlab/phantom.hpp"

#include "wmhlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace wmhlab::phantom {

using kern::Dims3;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAirLevel = 0.04;
constexpr double kVentricleFrac = 0.25; // of tissue brightness
constexpr double kCsfFrac = 0.35;
// The scalp rim is painted brighter than any lesion can get and thick enough
// to keep most of its amplitude through the smoothing pass, so it pins the
// 99th-percentile normalization anchor.
constexpr double kScalpFrac = 2.2;
constexpr double kWmAxisFracXY = 0.34; // white-matter ellipsoid half-axes
constexpr double kWmAxisFracZ = 0.30;
constexpr double kCsfShellFrac = 0.35;   // CSF shell volume relative to the WM ellipsoid
constexpr double kConfounderCv = 0.25;   // spread of the confounder size factors
constexpr double kOffsetLowClamp = 0.55; // keeps every lesion above half the configured offset

struct Ellipsoid {
    double cx = 0, cy = 0, cz = 0;
    double ax = 1, ay = 1, az = 1;

    double quad(double x, double y, double z) const {
        const double dx = (x - cx) / ax, dy = (y - cy) / ay, dz = (z - cz) / az;
        return dx * dx + dy * dy + dz * dz;
    }
    bool contains(double x, double y, double z) const { return quad(x, y, z) <= 1.0; }
    Ellipsoid scaled(double s) const { return {cx, cy, cz, ax * s, ay * s, az * s}; }
    Ellipsoid grown(double gx, double gy, double gz) const {
        return {cx, cy, cz, ax + gx, ay + gy, az + gz};
    }
};

struct LesionDraw {
    double radius = 0, sx = 1, sy = 1, sz = 1;
    double offset = 0;
    double cx = 0, cy = 0, cz = 0;
    bool placed = false;
};

struct Anatomy {
    Ellipsoid wm, vent_left, vent_right, csf_outer, scalp_outer;
};

} // namespace

void PhantomConfig::validate() const {
    if (dims.nx < 12 || dims.ny < 12 || dims.nz < 12)
        throw ConfigError("PhantomConfig: dims must each be >= 12");
    for (double s : spacing)
        if (!(s > 0.0)) throw ConfigError("PhantomConfig: spacing must be > 0");
    if (!(background_mean > 0.0)) throw ConfigError("PhantomConfig: background_mean must be > 0");
    if (background_std < 0.0) throw ConfigError("PhantomConfig: background_std must be >= 0");
    if (lesion_count_mean < 0.0) throw ConfigError("PhantomConfig: lesion_count_mean must be >= 0");
    if (lesion_radius_log_std < 0.0)
        throw ConfigError("PhantomConfig: lesion_radius_log_std must be >= 0");
    if (lesion_count_mean > 0.0 && !(lesion_intensity_mean > 0.0))
        throw ConfigError("PhantomConfig: lesion_intensity_mean must be > 0 when lesions are drawn");
    if (lesion_intensity_std < 0.0)
        throw ConfigError("PhantomConfig: lesion_intensity_std must be >= 0");
    if (smoothing_sigma < 0.0) throw ConfigError("PhantomConfig: smoothing_sigma must be >= 0");
    if (noise_std < 0.0) throw ConfigError("PhantomConfig: noise_std must be >= 0");
    if (confounder_rho < -1.0 || confounder_rho > 1.0)
        throw ConfigError("PhantomConfig: confounder_rho must be in [-1, 1]");
}

namespace {

// compound-Poisson moments of the total drawn ellipsoid volume
void drawn_volume_moments(const PhantomConfig& cfg, double& mean, double& var) {
    const double mu = cfg.lesion_radius_log_mean, s2 = cfg.lesion_radius_log_std *
                                                       cfg.lesion_radius_log_std;
    const double unit = 4.0 / 3.0 * kPi;
    const double er3 = std::exp(3.0 * mu + 4.5 * s2);
    const double er6 = std::exp(6.0 * mu + 18.0 * s2);
    // per-axis scale ~ U(0.8, 1.25)
    constexpr double es = (0.8 + 1.25) / 2.0;
    constexpr double es2 = (1.25 * 1.25 * 1.25 - 0.8 * 0.8 * 0.8) / (3.0 * 0.45);
    const double ev = unit * er3 * es * es * es;
    const double ev2 = unit * unit * er6 * es2 * es2 * es2;
    mean = cfg.lesion_count_mean * ev;
    var = cfg.lesion_count_mean * ev2;
}

Anatomy make_anatomy(const PhantomConfig& cfg, double wm_factor, double vent_factor,
                     double csf_factor) {
    const double cx = 0.5 * (cfg.dims.nx - 1);
    const double cy = 0.5 * (cfg.dims.ny - 1);
    const double cz = 0.5 * (cfg.dims.nz - 1);

    Anatomy a;
    const double wm_scale = std::cbrt(wm_factor);
    a.wm = {cx,
            cy,
            cz,
            kWmAxisFracXY * cfg.dims.nx * wm_scale,
            kWmAxisFracXY * cfg.dims.ny * wm_scale,
            kWmAxisFracZ * cfg.dims.nz * wm_scale};

    const double vent_scale = std::cbrt(vent_factor);
    const Ellipsoid vent_base{0, 0, 0, 0.08 * cfg.dims.nx * vent_scale,
                              0.15 * cfg.dims.ny * vent_scale, 0.22 * cfg.dims.nz * vent_scale};
    a.vent_left = vent_base;
    a.vent_left.cx = cx - 0.10 * cfg.dims.nx;
    a.vent_left.cy = cy;
    a.vent_left.cz = cz;
    a.vent_right = vent_base;
    a.vent_right.cx = cx + 0.10 * cfg.dims.nx;
    a.vent_right.cy = cy;
    a.vent_right.cz = cz;

    // the shell volume scales with csf_factor alone, not with the WM factor
    const double shell = std::cbrt(1.0 + kCsfShellFrac * csf_factor / wm_factor);
    a.csf_outer = a.wm.scaled(shell);
    // thick enough that the smoothed scalp keeps a flat plateau at its core
    a.scalp_outer = a.csf_outer.grown(3.6, 3.6, 3.0);
    return a;
}

enum class Region : std::uint8_t { air, scalp, csf, white_matter, ventricle };

Region classify(const Anatomy& a, double x, double y, double z) {
    if (a.vent_left.contains(x, y, z) || a.vent_right.contains(x, y, z)) return Region::ventricle;
    if (a.wm.contains(x, y, z)) return Region::white_matter;
    if (a.csf_outer.contains(x, y, z)) return Region::csf;
    if (a.scalp_outer.contains(x, y, z)) return Region::scalp;
    return Region::air;
}

} // namespace

ScanRecord generate_scan(const PhantomConfig& cfg, int scan_index, GenDetails* details) {
    cfg.validate();
    if (scan_index < 0) throw ConfigError("generate_scan: scan_index must be >= 0");

    const Dims3 d = cfg.dims;
    const std::int64_t n = d.count();
    const std::uint64_t scan_seed = mix_seed(cfg.master_seed, static_cast<std::uint64_t>(scan_index) + 1);
    Rng rng(scan_seed);

    // 1. scan-level intensity and lesion shape draws
    const double tissue = std::clamp(rng.normal(cfg.background_mean, cfg.background_std), 0.05, 1.5);
    const int n_lesions = rng.poisson(cfg.lesion_count_mean);
    std::vector<LesionDraw> lesions(static_cast<std::size_t>(n_lesions));
    double proxy_volume = 0.0;
    for (LesionDraw& l : lesions) {
        l.radius = rng.lognormal(cfg.lesion_radius_log_mean, cfg.lesion_radius_log_std);
        l.sx = rng.uniform(0.8, 1.25);
        l.sy = rng.uniform(0.8, 1.25);
        l.sz = rng.uniform(0.8, 1.25);
        // the high clamp keeps every lesion dimmer than the scalp plateau so the
        // normalization anchor never moves with the lesion load
        const double offset_cap =
            std::min(2.0 * cfg.lesion_intensity_mean, 0.8 * (kScalpFrac - 1.0) * tissue);
        l.offset = std::clamp(rng.normal(cfg.lesion_intensity_mean, cfg.lesion_intensity_std),
                              kOffsetLowClamp * cfg.lesion_intensity_mean, offset_cap);
        proxy_volume += 4.0 / 3.0 * kPi * l.radius * l.radius * l.radius * l.sx * l.sy * l.sz;
    }

    // 2. confounder factors share the standardized lesion burden with weight rho
    double burden_mean = 0.0, burden_var = 0.0;
    drawn_volume_moments(cfg, burden_mean, burden_var);
    const double burden_z = burden_var > 0.0 ? (proxy_volume - burden_mean) / std::sqrt(burden_var)
                                             : 0.0;
    const double rho = cfg.confounder_rho;
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    auto factor = [&](double z) {
        return std::clamp(1.0 + kConfounderCv * (rho * burden_z + mix * z), 0.3, 1.8);
    };
    const double vent_factor = factor(rng.normal());
    const double wm_factor = factor(rng.normal());
    const double csf_factor = factor(rng.normal());

    const Anatomy anatomy = make_anatomy(cfg, wm_factor, vent_factor, csf_factor);

    // 3. place lesions inside the white matter; centers stay out of the
    // ventricles but lesions may touch them (periventricular analog)
    const Ellipsoid placement = anatomy.wm.scaled(0.78);
    const Ellipsoid keep_out_left = anatomy.vent_left.grown(1.0, 1.0, 1.0);
    const Ellipsoid keep_out_right = anatomy.vent_right.grown(1.0, 1.0, 1.0);
    for (LesionDraw& l : lesions) {
        for (int attempt = 0; attempt < 64 && !l.placed; ++attempt) {
            double ux, uy, uz;
            do {
                ux = rng.uniform(-1.0, 1.0);
                uy = rng.uniform(-1.0, 1.0);
                uz = rng.uniform(-1.0, 1.0);
            } while (ux * ux + uy * uy + uz * uz > 1.0);
            const double px = placement.cx + ux * placement.ax;
            const double py = placement.cy + uy * placement.ay;
            const double pz = placement.cz + uz * placement.az;
            if (keep_out_left.contains(px, py, pz) || keep_out_right.contains(px, py, pz))
                continue;
            l.cx = px;
            l.cy = py;
            l.cz = pz;
            l.placed = true;
        }
    }

    // 4. paint the anatomy and the lesion field
    // The annotation restriction uses the brain-tissue support (everything
    // inside the CSF envelope): boundary lesions overhang the WM ellipsoid and
    // must stay annotatable, while ventricles and CSF are far too dark to pass
    // any threshold. Scalp and air stay excluded.
    std::vector<float> background(static_cast<std::size_t>(n));
    Mask3D brain_region = Mask3D::zeros(d, cfg.spacing);
    std::int64_t vent_vox = 0, wm_vox = 0, csf_vox = 0;
#pragma omp parallel for collapse(2) schedule(static) reduction(+ : vent_vox, wm_vox, csf_vox)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::int64_t i = (static_cast<std::int64_t>(z) * d.ny + y) * d.nx + x;
                switch (classify(anatomy, x, y, z)) {
                    case Region::ventricle:
                        background[i] = static_cast<float>(kVentricleFrac * tissue);
                        brain_region.data[i] = 1;
                        ++vent_vox;
                        break;
                    case Region::white_matter:
                        background[i] = static_cast<float>(tissue);
                        brain_region.data[i] = 1;
                        ++wm_vox;
                        break;
                    case Region::csf:
                        background[i] = static_cast<float>(kCsfFrac * tissue);
                        brain_region.data[i] = 1;
                        ++csf_vox;
                        break;
                    case Region::scalp:
                        background[i] = static_cast<float>(kScalpFrac * tissue);
                        break;
                    case Region::air:
                        background[i] = static_cast<float>(kAirLevel);
                        break;
                }
            }

    std::vector<float> lesion_field(static_cast<std::size_t>(n), 0.0f);
    for (const LesionDraw& l : lesions) {
        if (!l.placed) continue;
        const Ellipsoid e{l.cx, l.cy, l.cz, l.radius * l.sx, l.radius * l.sy, l.radius * l.sz};
        const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.ax)));
        const int x1 = std::min(d.nx - 1, static_cast<int>(std::ceil(e.cx + e.ax)));
        const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ay)));
        const int y1 = std::min(d.ny - 1, static_cast<int>(std::ceil(e.cy + e.ay)));
        const int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.az)));
        const int z1 = std::min(d.nz - 1, static_cast<int>(std::ceil(e.cz + e.az)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!e.contains(x, y, z)) continue;
                    const std::int64_t i = (static_cast<std::int64_t>(z) * d.ny + y) * d.nx + x;
                    lesion_field[i] = std::max(lesion_field[i], static_cast<float>(l.offset));
                }
    }

    // 5. smooth both fields (linearity keeps image == smoothed bg + smoothed lesions)
    std::vector<float> bg_smooth(static_cast<std::size_t>(n)), les_smooth(static_cast<std::size_t>(n));
    kern::gaussian_smooth(background.data(), d, cfg.smoothing_sigma, bg_smooth.data());
    kern::gaussian_smooth(lesion_field.data(), d, cfg.smoothing_sigma, les_smooth.data());

    ScanRecord rec;
    rec.true_mask = Mask3D::zeros(d, cfg.spacing);
    const float mask_level = static_cast<float>(0.5 * cfg.lesion_intensity_mean);
    for (std::int64_t i = 0; i < n; ++i)
        rec.true_mask.data[i] = les_smooth[i] > mask_level ? 1 : 0;

    rec.image.dims = d;
    rec.image.spacing = cfg.spacing;
    rec.image.data.resize(static_cast<std::size_t>(n));
    const std::uint64_t noise_seed = mix_seed(scan_seed, 0x7015eULL);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const double noise = cfg.noise_std * counter_normal(noise_seed, static_cast<std::uint64_t>(i));
        rec.image.data[i] = static_cast<float>(bg_smooth[i] + les_smooth[i] + noise);
    }

    rec.annotated_mask = annotate(rec.image, rec.true_mask, cfg.annotation_policy, &brain_region);
    rec.label_volume_voxels = volume_from_mask(rec.annotated_mask).voxels;
    rec.confounders = {vent_vox, wm_vox, csf_vox};
    rec.domain_tag = cfg.domain_tag;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "_%06d", scan_index);
    rec.scan_id = cfg.domain_tag + idbuf;
    rec.seed = scan_seed;

    if (details) {
        details->lesions_drawn = n_lesions;
        details->drawn_volume_proxy = proxy_volume;
        details->wm_region = std::move(brain_region);
        details->prenoise_image.dims = d;
        details->prenoise_image.spacing = cfg.spacing;
        details->prenoise_image.data.resize(static_cast<std::size_t>(n));
        details->lesion_field.dims = d;
        details->lesion_field.spacing = cfg.spacing;
        details->lesion_field.data.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            details->prenoise_image.data[i] = bg_smooth[i] + les_smooth[i];
            details->lesion_field.data[i] = les_smooth[i];
        }
    }
    return rec;
}

Mask3D remove_small_components(const Mask3D& mask, int min_voxels) {
    const Dims3 d = mask.dims;
    Mask3D out = mask;
    std::vector<std::int8_t> seen(mask.data.size(), 0);
    std::vector<std::int64_t> stack, component;
    for (std::int64_t start = 0; start < d.count(); ++start) {
        if (!mask.data[start] || seen[start]) continue;
        stack.clear();
        component.clear();
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::int64_t i = stack.back();
            stack.pop_back();
            component.push_back(i);
            const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
            const int rem = static_cast<int>(i % (static_cast<std::int64_t>(d.nx) * d.ny));
            const int y = rem / d.nx, x = rem % d.nx;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        const int xx = x + dx, yy = y + dy, zz = z + dz;
                        if (xx < 0 || xx >= d.nx || yy < 0 || yy >= d.ny || zz < 0 || zz >= d.nz)
                            continue;
                        const std::int64_t j = (static_cast<std::int64_t>(zz) * d.ny + yy) * d.nx + xx;
                        if (mask.data[j] && !seen[j]) {
                            seen[j] = 1;
                            stack.push_back(j);
                        }
                    }
        }
        if (static_cast<int>(component.size()) < min_voxels)
            for (std::int64_t i : component) out.data[i] = 0;
    }
    return out;
}

Mask3D annotate(const Volume3D& image, const Mask3D& true_mask, const AnnotationPolicy& policy,
                const Mask3D* region) {
    require_same_grid(image.dims, image.spacing, true_mask.dims, true_mask.spacing);
    if (region) require_same_grid(image.dims, image.spacing, region->dims, region->spacing);

    if (policy.kind == AnnotationPolicy::Kind::exact) return true_mask;

    const Volume3D norm = percentile_normalize(image);
    Mask3D out = Mask3D::zeros(image.dims, image.spacing);
    const float t = static_cast<float>(policy.threshold);
    for (std::size_t i = 0; i < norm.data.size(); ++i) {
        if (norm.data[i] > t && (!region || region->data[i])) out.data[i] = 1;
    }
    return remove_small_components(out, 3);
}

std::vector<std::pair<std::string, PhantomConfig>> domain_presets() {
    std::vector<std::pair<std::string, PhantomConfig>> presets;

    PhantomConfig local;
    local.domain_tag = "local";
    local.annotation_policy = AnnotationPolicy::thresholded(0.54);
    local.master_seed = 101;
    presets.emplace_back("local", local);

    // confluent analog: few large lesions, expert (exact) raters
    PhantomConfig few_large = local;
    few_large.domain_tag = "few_large";
    few_large.lesion_count_mean = 2.5;
    few_large.lesion_radius_log_mean = std::log(3.2);
    few_large.lesion_radius_log_std = 0.25;
    few_large.annotation_policy = AnnotationPolicy::exact();
    few_large.master_seed = 102;
    presets.emplace_back("few_large", few_large);

    PhantomConfig many_small = local;
    many_small.domain_tag = "many_small";
    many_small.lesion_count_mean = 14.0;
    many_small.lesion_radius_log_mean = std::log(1.6);
    many_small.lesion_radius_log_std = 0.25;
    many_small.annotation_policy = AnnotationPolicy::exact();
    many_small.master_seed = 103;
    presets.emplace_back("many_small", many_small);

    // scanner-brightness shift
    PhantomConfig bright_shift = local;
    bright_shift.domain_tag = "bright_shift";
    bright_shift.lesion_intensity_mean = 0.36;
    bright_shift.lesion_intensity_std = 0.06;
    bright_shift.background_mean = 0.54;
    bright_shift.background_std = 0.04;
    bright_shift.annotation_policy = AnnotationPolicy::exact();
    bright_shift.master_seed = 104;
    presets.emplace_back("bright_shift", bright_shift);

    PhantomConfig noisy = local;
    noisy.domain_tag = "noisy";
    noisy.noise_std = 0.05;
    noisy.smoothing_sigma = 0.8;
    noisy.annotation_policy = AnnotationPolicy::exact();
    noisy.master_seed = 105;
    presets.emplace_back("noisy", noisy);

    return presets;
}

PhantomConfig preset_by_name(const std::string& name) {
    for (auto& [preset_name, cfg] : domain_presets())
        if (preset_name == name) return cfg;
    throw ConfigError("unknown phantom preset: " + name);
}

} // namespace wmhlab::phantom
