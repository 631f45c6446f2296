#include <doctest.h>

#include "wmhlab/rng.hpp"
#include "wmhlab/volume.hpp"
#include "wmhlab/volume_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace wmhlab;
namespace fs = std::filesystem;

namespace {

Mask3D random_mask(kern::Dims3 d, double p, Rng& rng) {
    Mask3D m = Mask3D::zeros(d);
    for (auto& v : m.data) v = rng.bernoulli(p) ? 1 : 0;
    return m;
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "wmhlab_volume_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("volume_from_mask counts voxels and converts to mm3") {
    Mask3D empty = Mask3D::zeros({4, 4, 4});
    CHECK(volume_from_mask(empty).voxels == 0);
    CHECK(volume_from_mask(empty).mm3 == 0.0);

    Mask3D full = Mask3D::zeros({4, 4, 4});
    std::fill(full.data.begin(), full.data.end(), 1);
    CHECK(volume_from_mask(full).voxels == 64);
    CHECK(volume_from_mask(full).mm3 == doctest::Approx(64.0));

    Mask3D ten = Mask3D::zeros({5, 5, 5}, {0.49, 0.49, 2.5});
    for (int i = 0; i < 10; ++i) ten.data[static_cast<std::size_t>(i) * 7] = 1;
    const MaskVolume v = volume_from_mask(ten);
    CHECK(v.voxels == 10);
    CHECK(v.mm3 == doctest::Approx(6.0025).epsilon(1e-12));
}

TEST_CASE("mask union/intersection counts are additive") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Mask3D a = random_mask({6, 5, 4}, 0.4, rng);
        const Mask3D b = random_mask({6, 5, 4}, 0.4, rng);
        Mask3D u = a, n = a;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            u.data[i] = a.data[i] | b.data[i];
            n.data[i] = a.data[i] & b.data[i];
        }
        CHECK(volume_from_mask(a).voxels + volume_from_mask(b).voxels ==
              volume_from_mask(u).voxels + volume_from_mask(n).voxels);
    }
}

TEST_CASE("percentile_normalize maps the 1/99 percentiles onto [0,1]") {
    // constant image degenerates to all zeros
    Volume3D constant = Volume3D::filled({4, 4, 4}, {1, 1, 1}, 3.5f);
    const Volume3D zeroed = percentile_normalize(constant);
    for (float v : zeroed.data) CHECK(v == 0.0f);

    // extremes clamp to the range endpoints
    Volume3D tiny = Volume3D::filled({2, 2, 2}, {1, 1, 1}, 0.0f);
    for (int i = 0; i < 8; ++i) tiny.data[i] = static_cast<float>(i + 1);
    const Volume3D norm = percentile_normalize(tiny);
    CHECK(norm.data[7] == 1.0f);
    CHECK(norm.data[0] == 0.0f);

    // 101 equally spaced values: value 50 maps to one half
    Volume3D ramp;
    ramp.dims = {101, 1, 1};
    ramp.data.resize(101);
    for (int i = 0; i <= 100; ++i) ramp.data[i] = static_cast<float>(i);
    const double p1 = percentile(ramp.data, 0.01);
    const double p99 = percentile(ramp.data, 0.99);
    CHECK(p1 == doctest::Approx(1.0));
    CHECK(p99 == doctest::Approx(99.0));
    const Volume3D ramp_norm = percentile_normalize(ramp);
    CHECK(ramp_norm.data[50] == doctest::Approx(0.5).epsilon(1e-6));

    // output always within [0,1]
    Rng rng(3);
    Volume3D noise = Volume3D::filled({8, 8, 8}, {1, 1, 1}, 0.0f);
    for (float& v : noise.data) v = static_cast<float>(rng.normal(0.0, 10.0));
    const Volume3D nn = percentile_normalize(noise);
    for (float v : nn.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    // idempotent on an image whose 1/99 percentiles already sit at 0 and 1:
    // the normalized 0..100 ramp has exactly that property
    const Volume3D once = ramp_norm;
    CHECK(percentile(once.data, 0.01) == doctest::Approx(0.0));
    CHECK(percentile(once.data, 0.99) == doctest::Approx(1.0));
    const Volume3D twice = percentile_normalize(once);
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(std::fabs(twice.data[i] - once.data[i]) <= 1e-6);
}

TEST_CASE("WMHV1 round trip is bit exact") {
    const fs::path dir = temp_dir();
    Rng rng(21);
    Volume3D vol = Volume3D::filled({7, 6, 5}, {0.49, 0.49, 2.5}, 0.0f);
    for (float& v : vol.data) v = static_cast<float>(rng.normal());
    save_volume(vol, dir / "vol.wmhv");
    const Volume3D back = load_volume(dir / "vol.wmhv");
    CHECK(back.dims == vol.dims);
    CHECK(back.spacing == vol.spacing);
    CHECK(back.data == vol.data);

    Mask3D mask = Mask3D::zeros({7, 6, 5}, {0.49, 0.49, 2.5});
    for (auto& v : mask.data) v = rng.bernoulli(0.5) ? 1 : 0;
    save_mask(mask, dir / "mask.wmhv");
    const Mask3D mask_back = load_mask(dir / "mask.wmhv");
    CHECK(mask_back.data == mask.data);
    CHECK(mask_back.spacing == mask.spacing);
}

TEST_CASE("WMHV1 errors are distinct") {
    const fs::path dir = temp_dir();
    Volume3D vol = Volume3D::filled({4, 4, 4}, {1, 1, 1}, 1.0f);
    save_volume(vol, dir / "ok.wmhv");

    SUBCASE("bad magic") {
        std::ofstream out(dir / "bad.wmhv", std::ios::binary);
        out << "{\"magic\":\"NOPE\"}\n";
        out.close();
        CHECK_THROWS_AS(load_volume(dir / "bad.wmhv"), BadMagicError);
    }
    SUBCASE("truncated payload") {
        std::ifstream in(dir / "ok.wmhv", std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir / "trunc.wmhv", std::ios::binary);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 8));
        out.close();
        CHECK_THROWS_AS(load_volume(dir / "trunc.wmhv"), PayloadMismatchError);
    }
    SUBCASE("oversized payload") {
        std::ifstream in(dir / "ok.wmhv", std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir / "long.wmhv", std::ios::binary);
        out.write(all.data(), static_cast<std::streamsize>(all.size()));
        out.put('x');
        out.close();
        CHECK_THROWS_AS(load_volume(dir / "long.wmhv"), PayloadMismatchError);
    }
    SUBCASE("non-binary mask payload") {
        Mask3D mask = Mask3D::zeros({2, 2, 2});
        save_mask(mask, dir / "m.wmhv");
        std::fstream f(dir / "m.wmhv", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-1, std::ios::end);
        f.put(static_cast<char>(2));
        f.close();
        CHECK_THROWS_AS(load_mask(dir / "m.wmhv"), NonBinaryMaskError);
    }
    SUBCASE("kind mismatch") {
        CHECK_THROWS_AS(load_mask(dir / "ok.wmhv"), DataError);
    }
}
