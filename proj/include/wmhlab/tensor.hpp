#pragma once

#include "wmhlab/kernels.hpp"

#include <vector>

namespace wmhlab {

// Multi-channel double grid used inside the network, [c][z][y][x] layout.
struct DTensor {
    int channels = 0;
    kern::Dims3 dims{};
    std::vector<double> v;

    static DTensor zeros(int c, kern::Dims3 d) {
        DTensor t;
        t.channels = c;
        t.dims = d;
        t.v.assign(static_cast<std::size_t>(c) * d.count(), 0.0);
        return t;
    }

    std::int64_t voxels() const { return dims.count(); }
    double* ch(int c) { return v.data() + static_cast<std::int64_t>(c) * voxels(); }
    const double* ch(int c) const { return v.data() + static_cast<std::int64_t>(c) * voxels(); }
};

} // namespace wmhlab
