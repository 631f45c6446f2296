#pragma once

#include "wmhlab/dataset.hpp"
#include "wmhlab/nnet.hpp"
#include "wmhlab/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wmhlab::infer {

struct AttentionMap {
    Volume3D map;
    std::string checkpoint_id;
    std::string scan_id;
};

// forward on the normalized image, unscaled by the checkpoint's volume scale,
// clamped at zero
double predict_volume_weak(const nnet::Checkpoint& ckpt, const Volume3D& image);

struct StrongPrediction {
    Mask3D mask;                 // probability > 0.5, strict
    std::int64_t volume_voxels = 0;
};

StrongPrediction predict_seg_strong(const nnet::Checkpoint& ckpt, const Volume3D& image);

// Exactly k = round(min(v_hat, N)) foreground voxels: the k largest attention
// values, ties at the cut broken by ascending linear voxel index.
Mask3D seg_from_attention(const std::vector<double>& attention, kern::Dims3 dims,
                          const std::array<double, 3>& spacing, double v_hat);

struct PredictionRow {
    std::string scan_id;
    std::string variant; // weak | strong | severity
    double pred_volume_voxels = 0.0;
    double label_volume_voxels = 0.0;
    double dice = 0.0; // NaN for the severity variant (no mask)
};

struct PredictOptions {
    bool save_attention = false;
    bool save_masks = true;
    std::optional<std::vector<std::string>> ids; // restrict to these scan ids
};

struct DatasetPrediction {
    std::vector<PredictionRow> rows;
    std::string checkpoint_id;
};

// Per scan: predicted volume, predicted mask file, Dice against the annotated
// mask. The weak variant's mask comes from volume-matched thresholding of the
// attention map; the severity variant predicts the class index instead of a
// volume. Mask/attention files land in `artifact_dir` when saving is enabled.
DatasetPrediction predict_dataset(const nnet::Checkpoint& ckpt,
                                  const std::filesystem::path& dataset_dir,
                                  const std::filesystem::path& artifact_dir,
                                  const PredictOptions& options = {});

void write_predictions_csv(const std::vector<PredictionRow>& rows,
                           const std::filesystem::path& path);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

} // namespace wmhlab::infer
