#include <doctest.h>

#include "wmhlab/dataset.hpp"
#include "wmhlab/metrics.hpp"
#include "wmhlab/phantom.hpp"
#include "wmhlab/volume_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace wmhlab;
namespace fs = std::filesystem;

namespace {

phantom::PhantomConfig small_config() {
    phantom::PhantomConfig cfg;
    cfg.dims = {24, 24, 12};
    cfg.master_seed = 7;
    return cfg;
}

} // namespace

TEST_CASE("config validation rejects bad parameters") {
    phantom::PhantomConfig cfg;
    cfg.dims = {8, 24, 24};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = phantom::PhantomConfig{};
    cfg.confounder_rho = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = phantom::PhantomConfig{};
    cfg.lesion_count_mean = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero lesion mean gives an empty true mask and zero exact label") {
    phantom::PhantomConfig cfg = small_config();
    cfg.lesion_count_mean = 0.0;
    cfg.annotation_policy = phantom::AnnotationPolicy::exact();
    const phantom::ScanRecord rec = phantom::generate_scan(cfg, 0);
    CHECK(volume_from_mask(rec.true_mask).voxels == 0);
    CHECK(rec.label_volume_voxels == 0);
}

TEST_CASE("generate_scan is byte-identical for the same (config, index)") {
    const phantom::PhantomConfig cfg = small_config();
    const phantom::ScanRecord a = phantom::generate_scan(cfg, 3);
    const phantom::ScanRecord b = phantom::generate_scan(cfg, 3);
    CHECK(a.image.data == b.image.data);
    CHECK(a.true_mask.data == b.true_mask.data);
    CHECK(a.annotated_mask.data == b.annotated_mask.data);
    CHECK(a.label_volume_voxels == b.label_volume_voxels);
    CHECK(a.confounders.ventricle_vox == b.confounders.ventricle_vox);
    CHECK(a.scan_id == b.scan_id);

    const phantom::ScanRecord c = phantom::generate_scan(cfg, 4);
    CHECK(a.image.data != c.image.data);
}

TEST_CASE("label always equals the annotated mask volume") {
    const phantom::PhantomConfig cfg = small_config();
    for (int i = 0; i < 8; ++i) {
        const phantom::ScanRecord rec = phantom::generate_scan(cfg, i);
        CHECK(rec.label_volume_voxels == volume_from_mask(rec.annotated_mask).voxels);
        rec.image.validate();
        rec.true_mask.validate();
        rec.annotated_mask.validate();
    }
}

TEST_CASE("exact annotation policy reproduces the true mask") {
    phantom::PhantomConfig cfg = small_config();
    cfg.annotation_policy = phantom::AnnotationPolicy::exact();
    const phantom::ScanRecord rec = phantom::generate_scan(cfg, 1);
    CHECK(metrics::dice(rec.annotated_mask, rec.true_mask) == 1.0);
}

TEST_CASE("threshold above the normalized range annotates nothing") {
    const phantom::PhantomConfig cfg = small_config();
    const phantom::ScanRecord rec = phantom::generate_scan(cfg, 2);
    const Mask3D ann = phantom::annotate(rec.image, rec.true_mask,
                                         phantom::AnnotationPolicy::thresholded(1.01));
    CHECK(volume_from_mask(ann).voxels == 0);
}

TEST_CASE("threshold policy captures a bright plateau core") {
    // constructed scan: background 0.3, one lesion plateau at 0.9
    Volume3D image = Volume3D::filled({16, 16, 16}, {1, 1, 1}, 0.3f);
    Mask3D true_mask = Mask3D::zeros({16, 16, 16});
    for (int z = 6; z < 10; ++z)
        for (int y = 6; y < 10; ++y)
            for (int x = 6; x < 10; ++x) {
                image.at(x, y, z) = 0.9f;
                true_mask.at(x, y, z) = 1;
            }
    const Mask3D ann =
        phantom::annotate(image, true_mask, phantom::AnnotationPolicy::thresholded(0.8));

    // oracle: recompute the normalization directly and compare voxel by voxel
    const Volume3D norm = percentile_normalize(image);
    std::int64_t expected = 0;
    for (std::size_t i = 0; i < norm.data.size(); ++i) {
        const bool above = norm.data[i] > 0.8f;
        expected += above;
        if (above) CHECK(ann.data[i] == 1); // mask contains the bright core
    }
    CHECK(volume_from_mask(ann).voxels == expected);
    CHECK(expected == 64);
}

TEST_CASE("small components are removed by the rater-cleanup step") {
    Mask3D mask = Mask3D::zeros({12, 12, 12});
    mask.at(2, 2, 2) = 1; // isolated voxel
    mask.at(8, 8, 8) = mask.at(9, 8, 8) = 1; // two-voxel component
    mask.at(4, 4, 6) = mask.at(5, 4, 6) = mask.at(6, 4, 6) = 1; // three voxels: kept
    const Mask3D cleaned = phantom::remove_small_components(mask, 3);
    CHECK(volume_from_mask(cleaned).voxels == 3);
    CHECK(cleaned.at(4, 4, 6) == 1);
    CHECK(cleaned.at(2, 2, 2) == 0);
    CHECK(cleaned.at(8, 8, 8) == 0);
}

TEST_CASE("annotate rejects grid mismatches") {
    Volume3D image = Volume3D::filled({12, 12, 12}, {1, 1, 1}, 0.5f);
    Mask3D wrong = Mask3D::zeros({12, 12, 14});
    CHECK_THROWS_AS(phantom::annotate(image, wrong, phantom::AnnotationPolicy::exact()),
                    GridMismatchError);
}

TEST_CASE("drawn lesion count matches the configured Poisson mean") {
    phantom::PhantomConfig cfg = small_config();
    cfg.lesion_count_mean = 5.0;
    cfg.lesion_radius_log_mean = std::log(2.0);
    double total = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        phantom::GenDetails details;
        phantom::generate_scan(cfg, i, &details);
        total += details.lesions_drawn;
    }
    CHECK(total / n == doctest::Approx(5.0).epsilon(0.05)); // 5 +- 0.25
}

TEST_CASE("smoothed lesion voxels exceed the local background by half the offset") {
    const phantom::PhantomConfig cfg = small_config();
    for (int i = 0; i < 5; ++i) {
        phantom::GenDetails details;
        const phantom::ScanRecord rec = phantom::generate_scan(cfg, i, &details);
        const float floor = static_cast<float>(0.5 * cfg.lesion_intensity_mean);
        for (std::size_t v = 0; v < rec.true_mask.data.size(); ++v) {
            if (!rec.true_mask.data[v]) continue;
            CHECK(details.lesion_field.data[v] > floor);
        }
    }
}

TEST_CASE("confounder volumes track the configured correlation") {
    phantom::PhantomConfig cfg;
    cfg.dims = {32, 32, 16};
    cfg.confounder_rho = 0.4;
    cfg.master_seed = 99;
    const int n = 600;
    std::vector<double> vent, label;
    for (int i = 0; i < n; ++i) {
        const phantom::ScanRecord rec = phantom::generate_scan(cfg, i);
        vent.push_back(static_cast<double>(rec.confounders.ventricle_vox));
        label.push_back(static_cast<double>(rec.label_volume_voxels));
    }
    const double corr = metrics::pearson(vent, label);
    CHECK(corr == doctest::Approx(0.4).epsilon(0.25)); // 0.4 +- 0.1
}

TEST_CASE("generate_dataset writes a consistent, reproducible directory") {
    const fs::path base = fs::temp_directory_path() / "wmhlab_dataset_test";
    fs::remove_all(base);
    phantom::PhantomConfig cfg = small_config();

    SUBCASE("zero scans produce an empty manifest") {
        const auto manifest = dataset::generate_dataset(cfg, 0, base / "empty");
        CHECK(manifest.scans.empty());
        CHECK(fs::exists(base / "empty" / "manifest.json"));
    }

    SUBCASE("labels match the on-disk masks; regeneration is byte-identical") {
        dataset::generate_dataset(cfg, 10, base / "ten");
        const auto manifest = dataset::load_manifest(base / "ten");
        REQUIRE(manifest.scans.size() == 10);
        for (const auto& scan : manifest.scans) {
            const Mask3D ann = dataset::load_scan_annotated_mask(base / "ten", scan);
            CHECK(volume_from_mask(ann).voxels == scan.label_volume_voxels);
        }

        dataset::generate_dataset(cfg, 10, base / "ten2");
        auto read_bytes = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        };
        CHECK(read_bytes(base / "ten" / "manifest.json") ==
              read_bytes(base / "ten2" / "manifest.json"));
        CHECK(read_bytes(base / "ten" / manifest.scans[0].image_file) ==
              read_bytes(base / "ten2" / manifest.scans[0].image_file));
    }

    SUBCASE("refuses to overwrite a non-empty directory") {
        dataset::generate_dataset(cfg, 1, base / "occupied");
        CHECK_THROWS_AS(dataset::generate_dataset(cfg, 1, base / "occupied"), DataError);
        CHECK_NOTHROW(dataset::generate_dataset(cfg, 1, base / "occupied", true));
    }
}

TEST_CASE("domain presets cover the five evaluation settings") {
    const auto presets = phantom::domain_presets();
    REQUIRE(presets.size() >= 5);
    CHECK(presets[0].first == "local");
    CHECK(presets[0].second.annotation_policy.kind == phantom::AnnotationPolicy::Kind::threshold);
    int exact_count = 0;
    for (const auto& [name, cfg] : presets) {
        CHECK_NOTHROW(cfg.validate());
        if (cfg.annotation_policy.kind == phantom::AnnotationPolicy::Kind::exact) ++exact_count;
    }
    CHECK(exact_count >= 4);
    CHECK_THROWS_AS(phantom::preset_by_name("nope"), ConfigError);
}
