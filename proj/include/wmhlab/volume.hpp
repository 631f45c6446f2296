#pragma once

#include "wmhlab/errors.hpp"
#include "wmhlab/kernels.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace wmhlab {

// Dense 3D scalar grid, 32-bit intensities, x-fastest scan order.
struct Volume3D {
    kern::Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    static Volume3D filled(kern::Dims3 d, std::array<double, 3> spacing, float value);

    std::int64_t voxels() const { return dims.count(); }
    float& at(int x, int y, int z) {
        return data[(static_cast<std::int64_t>(z) * dims.ny + y) * dims.nx + x];
    }
    float at(int x, int y, int z) const {
        return data[(static_cast<std::int64_t>(z) * dims.ny + y) * dims.nx + x];
    }
    // throws ConfigError on non-positive dims/spacing or size mismatch, DataError on non-finite data
    void validate() const;
};

// Binary companion grid; data strictly in {0, 1}.
struct Mask3D {
    kern::Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> data;

    static Mask3D zeros(kern::Dims3 d, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    std::int64_t voxels() const { return dims.count(); }
    std::uint8_t& at(int x, int y, int z) {
        return data[(static_cast<std::int64_t>(z) * dims.ny + y) * dims.nx + x];
    }
    std::uint8_t at(int x, int y, int z) const {
        return data[(static_cast<std::int64_t>(z) * dims.ny + y) * dims.nx + x];
    }
    void validate() const;
};

// throws GridMismatchError unless dims and spacing agree
void require_same_grid(kern::Dims3 a, const std::array<double, 3>& sa,
                       kern::Dims3 b, const std::array<double, 3>& sb);

struct MaskVolume {
    std::int64_t voxels = 0;
    double mm3 = 0.0;
};

// The canonical volume unit is the voxel count; mm3 is reporting metadata.
MaskVolume volume_from_mask(const Mask3D& mask);

// Maps intensities so the 1st/99th percentiles land on 0/1, clamped to [0,1].
// Percentiles interpolate linearly between closest order statistics. A
// constant image (p99 == p1) maps to all zeros.
Volume3D percentile_normalize(const Volume3D& vol);

// percentile by linear interpolation on a sorted copy, q in [0,1]
double percentile(std::vector<float> values, double q);

} // namespace wmhlab
