#include "wmhlab/train.hpp"

#include "wmhlab/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace wmhlab::train {

namespace fs = std::filesystem;

std::string label_type_name(LabelType t) {
    switch (t) {
        case LabelType::weak_volume: return "weak";
        case LabelType::strong_mask: return "strong";
        case LabelType::weak_severity: return "severity";
    }
    throw ConfigError("bad label type");
}

LabelType label_type_from_name(const std::string& name) {
    if (name == "weak") return LabelType::weak_volume;
    if (name == "strong") return LabelType::strong_mask;
    if (name == "severity") return LabelType::weak_severity;
    throw ConfigError("unknown label type: " + name + " (expected weak|strong|severity)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("TrainConfig: patience must be >= 0");
    if (augmentation.translate_frac < 0.0 || augmentation.translate_frac >= 1.0)
        throw ConfigError("TrainConfig: translate_frac must be in [0, 1)");
    if (augmentation.rotate_deg < 0.0 || augmentation.rotate_deg > 180.0)
        throw ConfigError("TrainConfig: rotate_deg must be in [0, 180]");
    if (base_filters < 1) throw ConfigError("TrainConfig: base_filters must be >= 1");
    if (optimizer.rho < 0.0 || optimizer.rho >= 1.0)
        throw ConfigError("TrainConfig: optimizer rho must be in [0, 1)");
    if (!(optimizer.epsilon > 0.0)) throw ConfigError("TrainConfig: optimizer epsilon must be > 0");
}

SplitManifest split_dataset(const std::vector<std::string>& ids, std::uint64_t seed) {
    std::vector<std::string> shuffled = ids;
    Rng rng(mix_seed(seed, 0x5971fULL));
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.below(i)]);

    const std::size_t n = shuffled.size();
    const std::size_t n_val = n / 5, n_test = n / 5;
    const std::size_t n_train = n - n_val - n_test;
    SplitManifest split;
    split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    split.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
    split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
    return split;
}

AugmentSample augment(const Volume3D& image, const Mask3D& ann_mask, const AugmentConfig& cfg,
                      Rng& rng) {
    require_same_grid(image.dims, image.spacing, ann_mask.dims, ann_mask.spacing);
    const kern::Dims3 d = image.dims;

    const double tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * d.nx;
    const double ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * d.ny;
    const double tz = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * d.nz;
    const double theta = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg) * 3.14159265358979323846 / 180.0;
    const bool flip = cfg.flip_x && rng.bernoulli(0.5);

    // sampling map: output voxel -> input coordinate, inverting
    // flip -> rotate(theta) about the volume center -> translate
    const double cx = 0.5 * (d.nx - 1), cy = 0.5 * (d.ny - 1), cz = 0.5 * (d.nz - 1);
    const double ct = std::cos(theta), st = std::sin(theta);
    // R(-theta) about z
    const double rinv[9] = {ct, st, 0.0, -st, ct, 0.0, 0.0, 0.0, 1.0};
    double a[9];
    for (int i = 0; i < 9; ++i) a[i] = rinv[i];
    // offset = Rinv*(-t - c) + c, then the x mirror
    double off[3] = {rinv[0] * (-tx - cx) + rinv[1] * (-ty - cy) + cx,
                     rinv[3] * (-tx - cx) + rinv[4] * (-ty - cy) + cy,
                     (-tz - cz) + cz};
    if (flip) {
        for (int j = 0; j < 3; ++j) a[j] = -a[j];
        off[0] = -off[0] + 2.0 * cx;
    }

    AugmentSample out;
    out.image.dims = d;
    out.image.spacing = image.spacing;
    out.image.data.resize(image.data.size());
    kern::resample_trilinear(image.data.data(), d, a, off, out.image.data.data());
    out.mask.dims = d;
    out.mask.spacing = ann_mask.spacing;
    out.mask.data.resize(ann_mask.data.size());
    kern::resample_nearest(ann_mask.data.data(), d, a, off, out.mask.data.data());
    out.label_voxels = volume_from_mask(out.mask).voxels;
    return out;
}

double mse_loss(std::span<const double> y_hat, std::span<const double> y_scaled) {
    if (y_hat.size() != y_scaled.size() || y_hat.empty())
        throw ConfigError("mse_loss: need equal nonzero lengths");
    double acc = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i)
        acc += (y_hat[i] - y_scaled[i]) * (y_hat[i] - y_scaled[i]);
    return acc / static_cast<double>(y_hat.size());
}

void DiceAccumulator::add(const DTensor& prob, const Mask3D& target) {
    if (prob.channels != 1 || !(prob.dims == target.dims))
        throw ConfigError("DiceAccumulator: probability map and mask grids differ");
    for (std::size_t i = 0; i < prob.v.size(); ++i) {
        const double p = prob.v[i];
        const double g = target.data[i];
        sum_p += p;
        sum_g += g;
        sum_pg += p * g;
    }
}

double DiceAccumulator::loss() const {
    return 1.0 - (2.0 * sum_pg + epsilon) / (sum_p + sum_g + epsilon);
}

double DiceAccumulator::grad(double g) const {
    const double numer = 2.0 * sum_pg + epsilon;
    const double denom = sum_p + sum_g + epsilon;
    return -(2.0 * g * denom - numer) / (denom * denom);
}

double soft_dice_loss(const DTensor& prob, const Mask3D& target) {
    DiceAccumulator acc;
    acc.add(prob, target);
    return acc.loss();
}

AdadeltaState AdadeltaState::zeros_for(const nnet::Weights& w) {
    return {w.zeros_like(), w.zeros_like()};
}

void adadelta_step(nnet::Weights& weights, const nnet::Weights& grads, AdadeltaState& state,
                   const AdadeltaConfig& cfg) {
    struct Slot {
        std::vector<double>* w;
        const std::vector<double>* g;
        std::vector<double>* eg2;
        std::vector<double>* ed2;
    };
    std::vector<Slot> slots;
    weights.for_each_param([&](const std::string&, std::vector<double>& p) {
        slots.push_back({&p, nullptr, nullptr, nullptr});
    });
    std::size_t k = 0;
    grads.for_each_param(
        [&](const std::string&, const std::vector<double>& p) { slots[k++].g = &p; });
    k = 0;
    state.sq_grad.for_each_param(
        [&](const std::string&, std::vector<double>& p) { slots[k++].eg2 = &p; });
    k = 0;
    state.sq_delta.for_each_param(
        [&](const std::string&, std::vector<double>& p) { slots[k++].ed2 = &p; });

    for (Slot& s : slots) {
        for (std::size_t i = 0; i < s.w->size(); ++i) {
            const double g = (*s.g)[i];
            double& eg2 = (*s.eg2)[i];
            double& ed2 = (*s.ed2)[i];
            eg2 = cfg.rho * eg2 + (1.0 - cfg.rho) * g * g;
            const double delta = -std::sqrt(ed2 + cfg.epsilon) / std::sqrt(eg2 + cfg.epsilon) * g;
            ed2 = cfg.rho * ed2 + (1.0 - cfg.rho) * delta * delta;
            (*s.w)[i] += cfg.lr * delta;
        }
    }
}

int severity_from_volume(std::int64_t v_voxels, const std::array<double, 4>& bin_edges) {
    int cls = 0;
    for (double edge : bin_edges)
        if (static_cast<double>(v_voxels) > edge) ++cls;
    return cls;
}

std::array<double, 4> severity_bin_edges(const std::vector<std::int64_t>& train_volumes) {
    if (train_volumes.empty()) throw ConfigError("severity_bin_edges: empty volume list");
    std::vector<float> sorted(train_volumes.begin(), train_volumes.end());
    std::array<double, 4> edges{};
    for (int q = 1; q <= 4; ++q) edges[q - 1] = percentile(sorted, 0.2 * q);
    return edges;
}

namespace {

struct LoadedScan {
    Volume3D image; // percentile normalized
    Mask3D mask;    // annotated mask
    std::int64_t label = 0;
};

struct Batchset {
    std::vector<LoadedScan> scans;
};

Batchset load_split(const fs::path& dir, const dataset::DatasetManifest& manifest,
                    const std::vector<std::string>& ids) {
    std::map<std::string, const dataset::ManifestScan*> by_id;
    for (const auto& s : manifest.scans) by_id[s.scan_id] = &s;
    Batchset set;
    for (const std::string& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("split id not present in manifest: " + id);
        LoadedScan scan;
        scan.image = percentile_normalize(dataset::load_scan_image(dir, *it->second));
        scan.mask = dataset::load_scan_annotated_mask(dir, *it->second);
        scan.label = it->second->label_volume_voxels;
        set.scans.push_back(std::move(scan));
    }
    return set;
}

double severity_target(std::int64_t label, const std::array<double, 4>& edges) {
    return static_cast<double>(severity_from_volume(label, edges));
}

} // namespace

TrainResult train(const fs::path& dataset_dir, const TrainConfig& config) {
    return train_on_manifest(dataset_dir, dataset::load_manifest(dataset_dir), config);
}

TrainResult train_on_manifest(const fs::path& dataset_dir, const dataset::DatasetManifest& manifest,
                              const TrainConfig& config, std::optional<int> max_steps,
                              std::optional<SplitManifest> fixed_split) {
    config.validate();
    if (manifest.scans.empty()) throw TrainAbortError("train: dataset is empty");

    std::vector<std::string> ids;
    for (const auto& s : manifest.scans) ids.push_back(s.scan_id);
    SplitManifest split =
        fixed_split ? *fixed_split : split_dataset(ids, config.split_seed.value_or(config.seed));
    if (split.train.empty() || split.val.empty())
        throw TrainAbortError("train: empty train or validation split");

    const Batchset train_set = load_split(dataset_dir, manifest, split.train);
    const Batchset val_set = load_split(dataset_dir, manifest, split.val);

    // label scaling and severity binning come from the training split only
    std::vector<std::int64_t> train_labels;
    for (const auto& s : train_set.scans) train_labels.push_back(s.label);
    double volume_scale = 1.0;
    std::optional<std::array<double, 4>> bin_edges;
    if (config.label_type == LabelType::weak_volume) {
        if (config.volume_scale) {
            volume_scale = *config.volume_scale;
        } else {
            const double mean = std::accumulate(train_labels.begin(), train_labels.end(), 0.0) /
                                static_cast<double>(train_labels.size());
            volume_scale = mean > 0.0 ? mean : 1.0;
        }
        if (!(volume_scale > 0.0)) throw ConfigError("train: volume_scale must be > 0");
    } else if (config.label_type == LabelType::weak_severity) {
        bin_edges = severity_bin_edges(train_labels);
    }

    nnet::NetworkSpec spec;
    spec.variant = config.label_type == LabelType::strong_mask
                       ? nnet::Variant::strong_segmentation
                       : nnet::Variant::weak_regression;
    spec.base_filters = config.base_filters;
    spec.input_dims = manifest.config.dims;
    spec.validate();

    nnet::Weights weights = nnet::build_network(spec, mix_seed(config.seed, 0x171ULL));
    AdadeltaState opt_state = AdadeltaState::zeros_for(weights);

    auto weak_target = [&](std::int64_t label) {
        return config.label_type == LabelType::weak_severity ? severity_target(label, *bin_edges)
                                                             : static_cast<double>(label) / volume_scale;
    };

    auto validation_loss = [&]() {
        if (config.label_type == LabelType::strong_mask) {
            DiceAccumulator acc;
            for (const auto& s : val_set.scans) {
                nnet::BodyCache cache;
                acc.add(nnet::forward_strong(weights, s.image, cache), s.mask);
            }
            return acc.loss();
        }
        std::vector<double> y_hat, y;
        for (const auto& s : val_set.scans) {
            nnet::BodyCache cache;
            y_hat.push_back(nnet::forward_weak(weights, s.image, cache).y_hat);
            y.push_back(weak_target(s.label));
        }
        return mse_loss(y_hat, y);
    };

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    nnet::Weights best_weights = weights;
    int bad_epochs = 0;
    int steps_done = 0;
    bool out_of_steps = false;

    std::vector<std::size_t> order(train_set.scans.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.max_epochs && !out_of_steps; ++epoch) {
        Rng epoch_rng(mix_seed(config.seed, 0xe90c4ULL + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[i - 1 - (epoch_rng.next_u64() % i)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t bsz = std::min<std::size_t>(config.batch_size, order.size() - start);
            nnet::Weights grads = weights.zeros_like();
            double batch_loss = 0.0;

            if (config.label_type == LabelType::strong_mask) {
                std::vector<nnet::BodyCache> caches(bsz);
                std::vector<DTensor> probs;
                std::vector<Mask3D> targets;
                DiceAccumulator acc;
                for (std::size_t b = 0; b < bsz; ++b) {
                    const LoadedScan& s = train_set.scans[order[start + b]];
                    AugmentSample aug = augment(s.image, s.mask, config.augmentation, epoch_rng);
                    probs.push_back(nnet::forward_strong(weights, aug.image, caches[b]));
                    acc.add(probs.back(), aug.mask);
                    targets.push_back(std::move(aug.mask));
                }
                batch_loss = acc.loss();
                if (!std::isfinite(batch_loss))
                    throw TrainAbortError("train: non-finite Dice loss at epoch " +
                                          std::to_string(epoch));
                for (std::size_t b = 0; b < bsz; ++b) {
                    DTensor d_prob = DTensor::zeros(1, probs[b].dims);
                    for (std::size_t i = 0; i < d_prob.v.size(); ++i)
                        d_prob.v[i] = acc.grad(targets[b].data[i]);
                    nnet::backward_strong(weights, caches[b], probs[b], d_prob, grads);
                }
            } else {
                std::vector<double> y_hat(bsz), y(bsz);
                for (std::size_t b = 0; b < bsz; ++b) {
                    const LoadedScan& s = train_set.scans[order[start + b]];
                    AugmentSample aug = augment(s.image, s.mask, config.augmentation, epoch_rng);
                    nnet::BodyCache cache;
                    const nnet::WeakForward fwd = nnet::forward_weak(weights, aug.image, cache);
                    y_hat[b] = fwd.y_hat;
                    y[b] = weak_target(aug.label_voxels);
                    const double d_y = 2.0 * (fwd.y_hat - y[b]) / static_cast<double>(bsz);
                    nnet::backward_weak(weights, cache, fwd, d_y, grads);
                }
                batch_loss = mse_loss(y_hat, y);
                if (!std::isfinite(batch_loss))
                    throw TrainAbortError("train: non-finite MSE loss at epoch " +
                                          std::to_string(epoch));
            }

            adadelta_step(weights, grads, opt_state, config.optimizer);
            epoch_loss += batch_loss;
            ++batches;
            if (max_steps && ++steps_done >= *max_steps) {
                out_of_steps = true;
                break;
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches ? epoch_loss / batches : 0.0;
        stats.val_loss = validation_loss();
        if (!std::isfinite(stats.val_loss))
            throw TrainAbortError("train: non-finite validation loss at epoch " +
                                  std::to_string(epoch));
        result.history.push_back(stats);

        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_weights = weights;
            result.best_epoch = epoch;
            bad_epochs = 0;
        } else if (++bad_epochs > config.patience) {
            break;
        }
    }

    result.checkpoint.weights = out_of_steps ? weights : best_weights;
    result.checkpoint.volume_scale = volume_scale;
    result.checkpoint.severity_bin_edges = bin_edges;
    result.checkpoint.seed = config.seed;
    result.split = std::move(split);
    return result;
}

void write_history_csv(const std::vector<EpochStats>& history, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write history: " + path.string());
    out << "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
        out << buf;
    }
}

} // namespace wmhlab::train
