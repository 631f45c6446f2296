#include "wmhlab/volume.hpp"

#include <algorithm>
#include <cmath>

namespace wmhlab {

Volume3D Volume3D::filled(kern::Dims3 d, std::array<double, 3> spacing, float value) {
    Volume3D v;
    v.dims = d;
    v.spacing = spacing;
    v.data.assign(static_cast<std::size_t>(d.count()), value);
    return v;
}

void Volume3D::validate() const {
    if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
        throw ConfigError("Volume3D: dims must be positive");
    for (double s : spacing)
        if (!(s > 0.0)) throw ConfigError("Volume3D: spacing must be > 0");
    if (static_cast<std::int64_t>(data.size()) != dims.count())
        throw ConfigError("Volume3D: data length does not equal nx*ny*nz");
    for (float v : data)
        if (!std::isfinite(v)) throw DataError("Volume3D: non-finite intensity");
}

Mask3D Mask3D::zeros(kern::Dims3 d, std::array<double, 3> spacing) {
    Mask3D m;
    m.dims = d;
    m.spacing = spacing;
    m.data.assign(static_cast<std::size_t>(d.count()), 0);
    return m;
}

void Mask3D::validate() const {
    if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
        throw ConfigError("Mask3D: dims must be positive");
    for (double s : spacing)
        if (!(s > 0.0)) throw ConfigError("Mask3D: spacing must be > 0");
    if (static_cast<std::int64_t>(data.size()) != dims.count())
        throw ConfigError("Mask3D: data length does not equal nx*ny*nz");
    for (std::uint8_t v : data)
        if (v > 1) throw NonBinaryMaskError("Mask3D: value outside {0,1}");
}

void require_same_grid(kern::Dims3 a, const std::array<double, 3>& sa,
                       kern::Dims3 b, const std::array<double, 3>& sb) {
    if (!(a == b) || sa != sb)
        throw GridMismatchError("grids differ in dims or spacing");
}

MaskVolume volume_from_mask(const Mask3D& mask) {
    std::int64_t count = 0;
    for (std::uint8_t v : mask.data) count += v;
    return {count, static_cast<double>(count) * mask.spacing[0] * mask.spacing[1] * mask.spacing[2]};
}

double percentile(std::vector<float> values, double q) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 1) return values[0];
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= n) return values[n - 1];
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

Volume3D percentile_normalize(const Volume3D& vol) {
    const double p1 = percentile(vol.data, 0.01);
    const double p99 = percentile(vol.data, 0.99);
    Volume3D out = vol;
    if (!(p99 > p1)) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    const double scale = 1.0 / (p99 - p1);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double v = (static_cast<double>(vol.data[i]) - p1) * scale;
        out.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

} // namespace wmhlab
