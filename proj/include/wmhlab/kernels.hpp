#pragma once

#include <cstdint>

namespace wmhlab::kern {

struct Dims3 {
    int nx = 0, ny = 0, nz = 0;

    std::int64_t count() const {
        return static_cast<std::int64_t>(nx) * ny * nz;
    }
    bool operator==(const Dims3&) const = default;
};

// Dense 3D compute kernels used by the network, the phantom generator and the
// augmentation pipeline. Layout is always [channel][z][y][x] with x fastest.
//
// The default entry points are OpenMP-parallel; kern::serial holds plain
// reference implementations kept for correctness tests and the benchmark
// (tools/bench_kernels). Every parallel loop assigns each output element to
// exactly one iteration and accumulates reductions in a fixed order, so
// results do not depend on the thread count.

// 3x3x3 convolution, zero padding, stride 1.
// w layout: [cout][cin][kz][ky][kx] (27 taps per pair), b: [cout].
void conv3x3_forward(const double* in, int cin, Dims3 d,
                     const double* w, const double* b, int cout, double* out);
// din = correlation of dout with the flipped kernel.
void conv3x3_backward_input(const double* dout, int cout, Dims3 d,
                            const double* w, int cin, double* din);
// dw[co][ci][k] = sum_p dout[co](p) * in[ci](p + k - 1); db[co] = sum_p dout[co](p).
void conv3x3_backward_params(const double* dout, int cout, const double* in,
                             int cin, Dims3 d, double* dw, double* db);

void relu_forward(const double* in, std::int64_t n, double* out);
// pre = pre-activation values at the forward pass
void relu_backward(const double* dout, const double* pre, std::int64_t n, double* din);

// 2x2x2 max pooling (dims must be even). argmax stores, per output element,
// the flat input index within the channel slab; ties resolve to the first
// element in (dz, dy, dx) scan order.
void maxpool2_forward(const double* in, int c, Dims3 d, double* out, std::int64_t* argmax);
void maxpool2_backward(const double* dout, int c, Dims3 half, const std::int64_t* argmax,
                       Dims3 full, double* din);

// nearest-neighbor x2 upsampling and its adjoint
void upsample2_forward(const double* in, int c, Dims3 half, double* out);
void upsample2_backward(const double* dout, int c, Dims3 full, double* din);

// global average pooling: per-channel mean
void channel_means(const double* in, int c, Dims3 d, double* means);

// Separable Gaussian smoothing, kernel truncated at 3 sigma and renormalized
// at the borders (a linear map of the input). sigma <= 0 copies.
void gaussian_smooth(const float* in, Dims3 d, double sigma, float* out);

// Affine resampling: the output voxel p samples the input at A*p + t
// (voxel coordinates); taps outside the grid contribute zero.
void resample_trilinear(const float* in, Dims3 d, const double a[9], const double t[3],
                        float* out);
void resample_nearest(const std::uint8_t* in, Dims3 d, const double a[9], const double t[3],
                      std::uint8_t* out);

namespace serial {

void conv3x3_forward(const double* in, int cin, Dims3 d,
                     const double* w, const double* b, int cout, double* out);
void conv3x3_backward_input(const double* dout, int cout, Dims3 d,
                            const double* w, int cin, double* din);
void conv3x3_backward_params(const double* dout, int cout, const double* in,
                             int cin, Dims3 d, double* dw, double* db);
void relu_forward(const double* in, std::int64_t n, double* out);
void relu_backward(const double* dout, const double* pre, std::int64_t n, double* din);
void maxpool2_forward(const double* in, int c, Dims3 d, double* out, std::int64_t* argmax);
void maxpool2_backward(const double* dout, int c, Dims3 half, const std::int64_t* argmax,
                       Dims3 full, double* din);
void upsample2_forward(const double* in, int c, Dims3 half, double* out);
void upsample2_backward(const double* dout, int c, Dims3 full, double* din);
void channel_means(const double* in, int c, Dims3 d, double* means);
void gaussian_smooth(const float* in, Dims3 d, double sigma, float* out);
void resample_trilinear(const float* in, Dims3 d, const double a[9], const double t[3],
                        float* out);
void resample_nearest(const std::uint8_t* in, Dims3 d, const double a[9], const double t[3],
                      std::uint8_t* out);

} // namespace serial

} // namespace wmhlab::kern
