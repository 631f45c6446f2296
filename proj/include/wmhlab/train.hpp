#pragma once

#include "wmhlab/dataset.hpp"
#include "wmhlab/nnet.hpp"
#include "wmhlab/rng.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <optional>
#include <string>
#include <vector>

namespace wmhlab::train {

enum class LabelType { weak_volume, strong_mask, weak_severity };

std::string label_type_name(LabelType t);
LabelType label_type_from_name(const std::string& name);

struct AdadeltaConfig {
    double rho = 0.95;
    double epsilon = 1e-6;
    double lr = 1.0;
};

struct AugmentConfig {
    double translate_frac = 0.2; // per-axis shift, uniform in +-frac*dim
    double rotate_deg = 54.0;    // in-plane rotation about the z axis
    bool flip_x = true;          // mirrored with probability 0.5
};

struct TrainConfig {
    LabelType label_type = LabelType::weak_volume;
    int batch_size = 4;
    int max_epochs = 40;
    int patience = 8;
    AdadeltaConfig optimizer;
    AugmentConfig augmentation;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> split_seed;  // defaults to seed; the experiment
                                              // harness pins it so every seed
                                              // repeat shares one split
    std::optional<double> volume_scale;       // default: mean train-split label volume
    int base_filters = 16;

    void validate() const;
};

struct SplitManifest {
    std::vector<std::string> train, val, test;
};

// deterministic shuffle, then 60/20/20: val and test get floor(n/5) each,
// train the remainder
SplitManifest split_dataset(const std::vector<std::string>& ids, std::uint64_t seed);

struct AugmentSample {
    Volume3D image;
    Mask3D mask;
    std::int64_t label_voxels = 0; // recomputed from the transformed mask
};

// translation + in-plane rotation + optional x flip; trilinear for the image,
// nearest for the mask, zero fill outside the grid
AugmentSample augment(const Volume3D& image, const Mask3D& ann_mask, const AugmentConfig& cfg,
                      Rng& rng);

double mse_loss(std::span<const double> y_hat, std::span<const double> y_scaled);

// pooled over all voxels passed in; epsilon = 1 defines the loss on empty masks
struct DiceAccumulator {
    double sum_p = 0.0, sum_g = 0.0, sum_pg = 0.0;
    static constexpr double epsilon = 1.0;

    void add(const DTensor& prob, const Mask3D& target);
    double loss() const;
    // dL/dp_i for a voxel with probability p (unused) and target g, given the sums
    double grad(double g) const;
};

double soft_dice_loss(const DTensor& prob, const Mask3D& target);

struct AdadeltaState {
    nnet::Weights sq_grad;  // E[g^2]
    nnet::Weights sq_delta; // E[dx^2]

    static AdadeltaState zeros_for(const nnet::Weights& w);
};

void adadelta_step(nnet::Weights& weights, const nnet::Weights& grads, AdadeltaState& state,
                   const AdadeltaConfig& cfg);

// class = number of bin edges below or equal to v (0..4)
int severity_from_volume(std::int64_t v_voxels, const std::array<double, 4>& bin_edges);
// training-set volume quintiles
std::array<double, 4> severity_bin_edges(const std::vector<std::int64_t>& train_volumes);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    nnet::Checkpoint checkpoint; // best-validation weights
    std::vector<EpochStats> history;
    int best_epoch = 0;
    SplitManifest split;
};

// Full training loop: per-sample percentile normalization + augmentation,
// Adadelta updates, early stopping on the validation loss.
// Throws TrainAbortError on an empty split or non-finite loss.
TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& config);

// optional cap on optimizer steps (used by the overfit smoke runs);
// train_on_manifest allows pre-filtered id lists
TrainResult train_on_manifest(const std::filesystem::path& dataset_dir,
                              const dataset::DatasetManifest& manifest, const TrainConfig& config,
                              std::optional<int> max_steps = std::nullopt,
                              std::optional<SplitManifest> fixed_split = std::nullopt);

void write_history_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path);

} // namespace wmhlab::train
