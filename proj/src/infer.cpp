#include "wmhlab/infer.hpp"

#include "wmhlab/metrics.hpp"
#include "wmhlab/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wmhlab::infer {

namespace fs = std::filesystem;

double predict_volume_weak(const nnet::Checkpoint& ckpt, const Volume3D& image) {
    nnet::BodyCache cache;
    const Volume3D norm = percentile_normalize(image);
    const nnet::WeakForward fwd = nnet::forward_weak(ckpt.weights, norm, cache);
    return std::max(0.0, fwd.y_hat * ckpt.volume_scale);
}

StrongPrediction predict_seg_strong(const nnet::Checkpoint& ckpt, const Volume3D& image) {
    nnet::BodyCache cache;
    const Volume3D norm = percentile_normalize(image);
    const DTensor prob = nnet::forward_strong(ckpt.weights, norm, cache);
    StrongPrediction out;
    out.mask = Mask3D::zeros(image.dims, image.spacing);
    for (std::size_t i = 0; i < prob.v.size(); ++i) {
        if (prob.v[i] > 0.5) {
            out.mask.data[i] = 1;
            ++out.volume_voxels;
        }
    }
    return out;
}

Mask3D seg_from_attention(const std::vector<double>& attention, kern::Dims3 dims,
                          const std::array<double, 3>& spacing, double v_hat) {
    if (v_hat < 0.0) throw ConfigError("seg_from_attention: v_hat must be >= 0");
    const std::int64_t n = dims.count();
    if (static_cast<std::int64_t>(attention.size()) != n)
        throw ConfigError("seg_from_attention: attention size != grid size");

    // round half away from zero, clamped to the voxel count
    const std::int64_t k =
        std::min<std::int64_t>(n, std::llround(std::min(v_hat, static_cast<double>(n))));

    Mask3D mask = Mask3D::zeros(dims, spacing);
    if (k <= 0) return mask;
    if (k >= n) {
        std::fill(mask.data.begin(), mask.data.end(), 1);
        return mask;
    }
    std::vector<std::int64_t> idx(attention.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto higher = [&](std::int64_t a, std::int64_t b) {
        if (attention[a] != attention[b]) return attention[a] > attention[b];
        return a < b; // deterministic tie break: ascending voxel index
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), higher);
    for (std::int64_t i = 0; i < k; ++i) mask.data[idx[i]] = 1;
    return mask;
}

namespace {

std::string checkpoint_tag(const nnet::Checkpoint& ckpt) {
    return nnet::variant_name(ckpt.weights.spec.variant) + "_seed" + std::to_string(ckpt.seed);
}

} // namespace

DatasetPrediction predict_dataset(const nnet::Checkpoint& ckpt, const fs::path& dataset_dir,
                                  const fs::path& artifact_dir, const PredictOptions& options) {
    const dataset::DatasetManifest manifest = dataset::load_manifest(dataset_dir);
    const bool severity = ckpt.severity_bin_edges.has_value();
    const bool weak = ckpt.weights.spec.variant == nnet::Variant::weak_regression;

    std::vector<const dataset::ManifestScan*> scans;
    if (options.ids) {
        for (const std::string& id : *options.ids) {
            const auto it = std::find_if(manifest.scans.begin(), manifest.scans.end(),
                                         [&](const auto& s) { return s.scan_id == id; });
            if (it == manifest.scans.end())
                throw DataError("predict_dataset: id not in manifest: " + id);
            scans.push_back(&*it);
        }
    } else {
        for (const auto& s : manifest.scans) scans.push_back(&s);
    }

    if (options.save_masks || options.save_attention) fs::create_directories(artifact_dir);

    DatasetPrediction result;
    result.checkpoint_id = checkpoint_tag(ckpt);
    for (const dataset::ManifestScan* scan : scans) {
        const Volume3D image = dataset::load_scan_image(dataset_dir, *scan);
        const Mask3D annotated = dataset::load_scan_annotated_mask(dataset_dir, *scan);

        PredictionRow row;
        row.scan_id = scan->scan_id;
        if (severity) {
            row.variant = "severity";
            nnet::BodyCache cache;
            const Volume3D norm = percentile_normalize(image);
            const nnet::WeakForward fwd = nnet::forward_weak(ckpt.weights, norm, cache);
            row.pred_volume_voxels = std::clamp(fwd.y_hat * ckpt.volume_scale, 0.0, 4.0);
            row.label_volume_voxels = static_cast<double>(train::severity_from_volume(
                scan->label_volume_voxels, *ckpt.severity_bin_edges));
            row.dice = std::nan("");
        } else if (weak) {
            row.variant = "weak";
            nnet::BodyCache cache;
            const Volume3D norm = percentile_normalize(image);
            const nnet::WeakForward fwd = nnet::forward_weak(ckpt.weights, norm, cache);
            const double v_hat = std::max(0.0, fwd.y_hat * ckpt.volume_scale);
            row.pred_volume_voxels = v_hat;
            row.label_volume_voxels = static_cast<double>(scan->label_volume_voxels);
            const std::vector<double> attention =
                nnet::attention_map(cache.features, ckpt.weights.head_w);
            const Mask3D pred_mask =
                seg_from_attention(attention, image.dims, image.spacing, v_hat);
            row.dice = metrics::dice(pred_mask, annotated);
            if (options.save_masks)
                save_mask(pred_mask, artifact_dir / (scan->scan_id + "_predmask.wmhv"));
            if (options.save_attention)
                save_volume(nnet::field_to_volume(attention, image.dims, image.spacing),
                            artifact_dir / (scan->scan_id + "_attention.wmhv"));
        } else {
            row.variant = "strong";
            const StrongPrediction pred = predict_seg_strong(ckpt, image);
            row.pred_volume_voxels = static_cast<double>(pred.volume_voxels);
            row.label_volume_voxels = static_cast<double>(scan->label_volume_voxels);
            row.dice = metrics::dice(pred.mask, annotated);
            if (options.save_masks)
                save_mask(pred.mask, artifact_dir / (scan->scan_id + "_predmask.wmhv"));
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_predictions_csv(const std::vector<PredictionRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write predictions: " + path.string());
    out << "scan_id,variant,pred_volume_voxels,label_volume_voxels,dice\n";
    char buf[256];
    for (const PredictionRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g\n", r.scan_id.c_str(),
                      r.variant.c_str(), r.pred_volume_voxels, r.label_volume_voxels, r.dice);
        out << buf;
    }
}

std::vector<PredictionRow> read_predictions_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open predictions: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "scan_id,variant,pred_volume_voxels,label_volume_voxels,dice")
        throw DataError("predictions: unexpected header in " + path.string());
    std::vector<PredictionRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        PredictionRow r;
        std::string field;
        if (!std::getline(ss, r.scan_id, ',') || !std::getline(ss, r.variant, ','))
            throw DataError("predictions: malformed row in " + path.string());
        try {
            std::getline(ss, field, ',');
            r.pred_volume_voxels = std::stod(field);
            std::getline(ss, field, ',');
            r.label_volume_voxels = std::stod(field);
            std::getline(ss, field, ',');
            r.dice = std::stod(field);
        } catch (const std::exception&) {
            throw DataError("predictions: malformed numeric field in " + path.string());
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace wmhlab::infer
