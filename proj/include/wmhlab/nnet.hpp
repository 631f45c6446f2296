#pragma once

#include "wmhlab/tensor.hpp"
#include "wmhlab/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace wmhlab::nnet {

enum class Variant { weak_regression, strong_segmentation };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Two-scale U-Net body shared by both variants:
//   [conv-ReLU x2] at full resolution -> 2x2x2 max pool -> [conv-ReLU x2] at
//   half resolution -> nearest-neighbor upsample x2 -> concat with the
//   full-resolution features -> [conv-ReLU, conv].
// The final conv has no activation; its output is the feature-map tensor with
// base_filters channels at full resolution. Heads:
//   weak_regression:      global average pooling per channel + dense scalar
//   strong_segmentation:  1x1x1 conv to one channel + sigmoid
struct NetworkSpec {
    Variant variant = Variant::weak_regression;
    int base_filters = 16;
    kern::Dims3 input_dims{};

    int bottom_filters() const { return 2 * base_filters; }
    // throws ConfigError unless dims are positive and divisible by 2 at the downsampling
    void validate() const;
    bool body_matches(const NetworkSpec& other) const {
        return base_filters == other.base_filters && input_dims == other.input_dims;
    }
};

struct ConvParam {
    int cout = 0, cin = 0;
    std::vector<double> w; // [cout][cin][3][3][3]
    std::vector<double> b; // [cout]
};

struct Weights {
    NetworkSpec spec;
    std::uint64_t init_seed = 0;
    ConvParam enc1a, enc1b, enc2a, enc2b, dec1, dec2;
    std::vector<double> head_w; // length base_filters (dense weights / 1x1x1 conv)
    std::vector<double> head_b; // length 1

    std::int64_t parameter_count() const;
    // visits every parameter array in a fixed order; name is stable across runs
    void for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const std::vector<double>&)>& fn) const;
    Weights zeros_like() const;
};

// fan-in-scaled uniform init, biases zero, deterministic in seed
Weights build_network(const NetworkSpec& spec, std::uint64_t seed);

// intermediate activations kept for the backward pass
struct BodyCache {
    DTensor input;
    DTensor pre1a, act1a, pre1b, skip;        // full res, base_filters
    DTensor pooled;                            // half res
    std::vector<std::int64_t> pool_argmax;
    DTensor pre2a, act2a, pre2b, act2b;        // half res, 2*base_filters
    DTensor upsampled;                         // full res, 2*base_filters
    DTensor cat;                               // full res, 3*base_filters ([skip, upsampled])
    DTensor pre_d1, act_d1;                    // full res, base_filters
    DTensor features;                          // full res, base_filters (no activation)
};

// runs the shared body; returns the final feature maps in cache.features
void body_forward(const Weights& w, const DTensor& input, BodyCache& cache);
// accumulates parameter gradients into grads; d_features is consumed
void body_backward(const Weights& w, const BodyCache& cache, DTensor& d_features, Weights& grads);

struct WeakForward {
    double y_hat = 0.0;
    std::vector<double> gap; // per-channel means of the feature maps
};

// image values are expected normalized to [0,1]; dims must match the spec
WeakForward forward_weak(const Weights& w, const Volume3D& image, BodyCache& cache);
void backward_weak(const Weights& w, const BodyCache& cache, const WeakForward& fwd,
                   double d_y_hat, Weights& grads);

// per-voxel probabilities in (0,1)
DTensor forward_strong(const Weights& w, const Volume3D& image, BodyCache& cache);
void backward_strong(const Weights& w, const BodyCache& cache, const DTensor& prob,
                     const DTensor& d_prob, Weights& grads);

// A(v) = sum_c head_w[c] * F_c(v)
std::vector<double> attention_map(const DTensor& features, const std::vector<double>& head_w);

// convenience wrappers used by inference
DTensor image_to_tensor(const Volume3D& image);
Volume3D field_to_volume(const std::vector<double>& field, kern::Dims3 dims,
                         const std::array<double, 3>& spacing);

// Checkpoint: spec + weights + the label scaling used in training.
// File format: one JSON metadata line, then raw little-endian f64 tensors in
// for_each_param order. Round trip is lossless.
struct Checkpoint {
    Weights weights;
    double volume_scale = 1.0;
    std::optional<std::array<double, 4>> severity_bin_edges;
    std::uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace wmhlab::nnet
