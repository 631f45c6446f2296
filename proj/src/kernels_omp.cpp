// OpenMP kernels. Inner loops run over contiguous x rows so the compiler can
// vectorize them; every reduction accumulates in a fixed order per output
// element, keeping results independent of the thread count.

#include "wmhlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmhlab::kern {

namespace {

inline std::int64_t idx3(Dims3 d, int z, int y, int x) {
    return (static_cast<std::int64_t>(z) * d.ny + y) * d.nx + x;
}

inline bool inside(Dims3 d, int z, int y, int x) {
    return z >= 0 && z < d.nz && y >= 0 && y < d.ny && x >= 0 && x < d.nx;
}

// adds the 3-tap x-correlation of `src` into `acc` (one (ci,kz,ky) slice row)
inline void row_taps(double* acc, const double* src, int nx, double w0, double w1, double w2) {
    if (nx == 1) {
        acc[0] += w1 * src[0];
        return;
    }
    acc[0] += w1 * src[0] + w2 * src[1];
    for (int x = 1; x < nx - 1; ++x)
        acc[x] += w0 * src[x - 1] + w1 * src[x] + w2 * src[x + 1];
    acc[nx - 1] += w0 * src[nx - 2] + w1 * src[nx - 1];
}

} // namespace

void conv3x3_forward(const double* in, int cin, Dims3 d,
                     const double* w, const double* b, int cout, double* out) {
    const std::int64_t plane = static_cast<std::int64_t>(d.nx) * d.ny;
    const std::int64_t slab = d.count();
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co)
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y) {
                double* orow = out + co * slab + z * plane + static_cast<std::int64_t>(y) * d.nx;
                for (int x = 0; x < d.nx; ++x) orow[x] = b[co];
                for (int ci = 0; ci < cin; ++ci) {
                    const double* islab = in + ci * slab;
                    const double* wk = w + (static_cast<std::int64_t>(co) * cin + ci) * 27;
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z + kz - 1;
                        if (zz < 0 || zz >= d.nz) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= d.ny) continue;
                            const double* irow = islab + zz * plane + static_cast<std::int64_t>(yy) * d.nx;
                            const double* wt = wk + kz * 9 + ky * 3;
                            row_taps(orow, irow, d.nx, wt[0], wt[1], wt[2]);
                        }
                    }
                }
            }
}

void conv3x3_backward_input(const double* dout, int cout, Dims3 d,
                            const double* w, int cin, double* din) {
    const std::int64_t plane = static_cast<std::int64_t>(d.nx) * d.ny;
    const std::int64_t slab = d.count();
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < cin; ++ci)
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y) {
                double* drow = din + ci * slab + z * plane + static_cast<std::int64_t>(y) * d.nx;
                std::fill(drow, drow + d.nx, 0.0);
                for (int co = 0; co < cout; ++co) {
                    const double* oslab = dout + co * slab;
                    const double* wk = w + (static_cast<std::int64_t>(co) * cin + ci) * 27;
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z - kz + 1;
                        if (zz < 0 || zz >= d.nz) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y - ky + 1;
                            if (yy < 0 || yy >= d.ny) continue;
                            const double* orow = oslab + zz * plane + static_cast<std::int64_t>(yy) * d.nx;
                            // in(q) feeds out(q - k + 1): x offset is +1 for kx=0, -1 for kx=2,
                            // which is the forward row pattern with taps swapped
                            const double* wt = wk + kz * 9 + ky * 3;
                            row_taps(drow, orow, d.nx, wt[2], wt[1], wt[0]);
                        }
                    }
                }
            }
}

void conv3x3_backward_params(const double* dout, int cout, const double* in,
                             int cin, Dims3 d, double* dw, double* db) {
    const std::int64_t plane = static_cast<std::int64_t>(d.nx) * d.ny;
    const std::int64_t slab = d.count();
    const int nx = d.nx;
    // one task per (co, ci, kz, ky): three x-shifted dot products over the volume
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci) {
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky) {
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                    for (int z = 0; z < d.nz; ++z) {
                        const int zz = z + kz - 1;
                        if (zz < 0 || zz >= d.nz) continue;
                        for (int y = 0; y < d.ny; ++y) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= d.ny) continue;
                            const double* drow = dout + co * slab + z * plane + static_cast<std::int64_t>(y) * nx;
                            const double* irow = in + ci * slab + zz * plane + static_cast<std::int64_t>(yy) * nx;
                            // kx=0 reads x-1, kx=1 reads x, kx=2 reads x+1
                            a1 += drow[0] * irow[0];
                            if (nx > 1) a2 += drow[0] * irow[1];
#pragma omp simd reduction(+ : a0, a1, a2)
                            for (int x = 1; x < nx - 1; ++x) {
                                const double dv = drow[x];
                                a0 += dv * irow[x - 1];
                                a1 += dv * irow[x];
                                a2 += dv * irow[x + 1];
                            }
                            if (nx > 1) {
                                a0 += drow[nx - 1] * irow[nx - 2];
                                a1 += drow[nx - 1] * irow[nx - 1];
                            }
                        }
                    }
                    double* wk = dw + ((static_cast<std::int64_t>(co) * cin + ci) * 27) + kz * 9 + ky * 3;
                    wk[0] = a0;
                    wk[1] = a1;
                    wk[2] = a2;
                }
        }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        const double* p = dout + co * slab;
        for (std::int64_t i = 0; i < slab; ++i) acc += p[i];
        db[co] = acc;
    }
}

void relu_forward(const double* in, std::int64_t n, double* out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* dout, const double* pre, std::int64_t n, double* din) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) din[i] = pre[i] > 0.0 ? dout[i] : 0.0;
}

void maxpool2_forward(const double* in, int c, Dims3 d, double* out, std::int64_t* argmax) {
    const Dims3 h{d.nx / 2, d.ny / 2, d.nz / 2};
    const std::int64_t slab = d.count(), hslab = h.count();
#pragma omp parallel for collapse(2) schedule(static)
    for (int ch = 0; ch < c; ++ch)
        for (int z = 0; z < h.nz; ++z)
            for (int y = 0; y < h.ny; ++y)
                for (int x = 0; x < h.nx; ++x) {
                    double best = -1e300;
                    std::int64_t besti = -1;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::int64_t i = idx3(d, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                                if (in[ch * slab + i] > best) {
                                    best = in[ch * slab + i];
                                    besti = i;
                                }
                            }
                    out[ch * hslab + idx3(h, z, y, x)] = best;
                    argmax[ch * hslab + idx3(h, z, y, x)] = besti;
                }
}

void maxpool2_backward(const double* dout, int c, Dims3 half, const std::int64_t* argmax,
                       Dims3 full, double* din) {
    const std::int64_t slab = full.count(), hslab = half.count();
    std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(c) * slab);
    // pooling windows are disjoint, so each input cell has a single writer
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < hslab; ++i)
            din[ch * slab + argmax[ch * hslab + i]] += dout[ch * hslab + i];
}

void upsample2_forward(const double* in, int c, Dims3 half, double* out) {
    const Dims3 f{half.nx * 2, half.ny * 2, half.nz * 2};
    const std::int64_t slab = f.count(), hslab = half.count();
#pragma omp parallel for collapse(2) schedule(static)
    for (int ch = 0; ch < c; ++ch)
        for (int z = 0; z < f.nz; ++z)
            for (int y = 0; y < f.ny; ++y) {
                double* orow = out + ch * slab + idx3(f, z, y, 0);
                const double* irow = in + ch * hslab + idx3(half, z / 2, y / 2, 0);
                for (int x = 0; x < f.nx; ++x) orow[x] = irow[x / 2];
            }
}

void upsample2_backward(const double* dout, int c, Dims3 full, double* din) {
    const Dims3 h{full.nx / 2, full.ny / 2, full.nz / 2};
    const std::int64_t slab = full.count(), hslab = h.count();
#pragma omp parallel for collapse(2) schedule(static)
    for (int ch = 0; ch < c; ++ch)
        for (int z = 0; z < h.nz; ++z)
            for (int y = 0; y < h.ny; ++y)
                for (int x = 0; x < h.nx; ++x) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += dout[ch * slab + idx3(full, 2 * z + dz, 2 * y + dy, 2 * x + dx)];
                    din[ch * hslab + idx3(h, z, y, x)] = acc;
                }
}

void channel_means(const double* in, int c, Dims3 d, double* means) {
    const std::int64_t slab = d.count();
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = in + ch * slab;
        for (std::int64_t i = 0; i < slab; ++i) acc += p[i];
        means[ch] = acc / static_cast<double>(slab);
    }
}

namespace {

std::vector<double> gauss_taps(double sigma, int& radius) {
    radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * (i / sigma) * (i / sigma));
        total += taps[i + radius];
    }
    for (double& t : taps) t /= total;
    return taps;
}

void smooth_axis_omp(const float* in, Dims3 d, const std::vector<double>& taps, int radius,
                     int axis, float* out) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                double acc = 0.0, wsum = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    int zz = z, yy = y, xx = x;
                    (axis == 0 ? xx : axis == 1 ? yy : zz) += k;
                    if (!inside(d, zz, yy, xx)) continue;
                    const double t = taps[k + radius];
                    acc += t * in[idx3(d, zz, yy, xx)];
                    wsum += t;
                }
                out[idx3(d, z, y, x)] = static_cast<float>(acc / wsum);
            }
}

} // namespace

void gaussian_smooth(const float* in, Dims3 d, double sigma, float* out) {
    const std::int64_t n = d.count();
    if (sigma <= 0.0) {
        std::copy(in, in + n, out);
        return;
    }
    int radius = 0;
    const std::vector<double> taps = gauss_taps(sigma, radius);
    std::vector<float> tmp(static_cast<std::size_t>(n));
    smooth_axis_omp(in, d, taps, radius, 0, out);
    smooth_axis_omp(out, d, taps, radius, 1, tmp.data());
    smooth_axis_omp(tmp.data(), d, taps, radius, 2, out);
}

void resample_trilinear(const float* in, Dims3 d, const double a[9], const double t[3],
                        float* out) {
    auto at = [&](int z, int y, int x) -> double {
        return inside(d, z, y, x) ? in[idx3(d, z, y, x)] : 0.0;
    };
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double sx = a[0] * x + a[1] * y + a[2] * z + t[0];
                const double sy = a[3] * x + a[4] * y + a[5] * z + t[1];
                const double sz = a[6] * x + a[7] * y + a[8] * z + t[2];
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const int z0 = static_cast<int>(std::floor(sz));
                const double fx = sx - x0, fy = sy - y0, fz = sz - z0;
                double acc = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                                               (dz ? fz : 1.0 - fz);
                            if (wgt == 0.0) continue;
                            acc += wgt * at(z0 + dz, y0 + dy, x0 + dx);
                        }
                out[idx3(d, z, y, x)] = static_cast<float>(acc);
            }
}

void resample_nearest(const std::uint8_t* in, Dims3 d, const double a[9], const double t[3],
                      std::uint8_t* out) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double sx = a[0] * x + a[1] * y + a[2] * z + t[0];
                const double sy = a[3] * x + a[4] * y + a[5] * z + t[1];
                const double sz = a[6] * x + a[7] * y + a[8] * z + t[2];
                const int xi = static_cast<int>(std::llround(sx));
                const int yi = static_cast<int>(std::llround(sy));
                const int zi = static_cast<int>(std::llround(sz));
                out[idx3(d, z, y, x)] = inside(d, zi, yi, xi) ? in[idx3(d, zi, yi, xi)] : 0;
            }
}

} // namespace wmhlab::kern
