#pragma once

// Central finite-difference gradient checking for the tiny test networks.
//
// ReLU and max-pool kinks make the loss only piecewise smooth, so a finite
// difference across a kink does not estimate the gradient. Each per-parameter
// probe therefore fingerprints the activation pattern (ReLU signs and pool
// argmax) at both perturbed points: pre-activations below any ReLU are affine
// in a single parameter, so identical patterns at w-h, w and w+h prove the
// pattern is constant on the whole segment and the loss restricted to it is
// smooth. Parameters whose probes land across a kink are skipped and counted.

#include "wmhlab/nnet.hpp"
#include "wmhlab/rng.hpp"
#include "wmhlab/train.hpp"

#include <cmath>
#include <vector>

namespace wmhlab::testutil {

inline std::uint64_t activation_pattern(const nnet::BodyCache& cache) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    auto feed = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    for (const DTensor* t : {&cache.pre1a, &cache.pre1b, &cache.pre2a, &cache.pre2b, &cache.pre_d1})
        for (double v : t->v) feed(v > 0.0 ? 1 : 0);
    for (std::int64_t v : cache.pool_argmax) feed(static_cast<std::uint64_t>(v));
    return h;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    int instances = 0;
    std::int64_t params_checked = 0;
    std::int64_t params_skipped = 0;      // probes that crossed a ReLU/pool kink at every step
    std::int64_t params_reduced_step = 0; // probes that needed a smaller step to clear a kink
    std::vector<char> index_checked;      // per flattened parameter index, any instance
    bool full_index_coverage() const {
        for (char c : index_checked)
            if (!c) return false;
        return !index_checked.empty();
    }
};

// relative error with a floor so zero-gradient parameters compare cleanly
inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-4, std::fabs(a), std::fabs(b)});
}

template <typename LossFn, typename GradFn>
GradCheckResult run_gradcheck(bool weak_variant, int instances, std::uint64_t seed, double h,
                              LossFn&& loss_of, GradFn&& grads_of) {
    GradCheckResult result;
    Rng rng(seed);
    for (int inst = 0; inst < instances; ++inst) {
        nnet::NetworkSpec spec;
        spec.variant = weak_variant ? nnet::Variant::weak_regression
                                    : nnet::Variant::strong_segmentation;
        spec.base_filters = 1;
        spec.input_dims = {8, 8, 8};
        nnet::Weights w = nnet::build_network(spec, rng.next_u64());

        Volume3D image = Volume3D::filled(spec.input_dims, {1, 1, 1}, 0.0f);
        for (float& v : image.data) v = static_cast<float>(rng.uniform01());

        nnet::Weights analytic = grads_of(w, image, rng);
        std::uint64_t base_pattern = 0;
        loss_of(w, image, &base_pattern);

        std::vector<std::vector<double>*> params, grads;
        w.for_each_param([&](const std::string&, std::vector<double>& p) { params.push_back(&p); });
        analytic.for_each_param(
            [&](const std::string&, std::vector<double>& p) { grads.push_back(&p); });

        std::size_t flat = 0;
        for (std::size_t t = 0; t < params.size(); ++t) {
            for (std::size_t i = 0; i < params[t]->size(); ++i, ++flat) {
                if (result.index_checked.size() <= flat) result.index_checked.push_back(0);
                const double orig = (*params[t])[i];
                // Bias-like parameters move every pre-activation at once, so at
                // the primary step some ReLU is almost always within reach of a
                // kink; retry with smaller steps until the pattern holds.
                bool checked = false;
                for (const double step : {h, h / 10.0, h / 100.0}) {
                    std::uint64_t pat_up = 0, pat_down = 0;
                    (*params[t])[i] = orig + step;
                    const double up = loss_of(w, image, &pat_up);
                    (*params[t])[i] = orig - step;
                    const double down = loss_of(w, image, &pat_down);
                    (*params[t])[i] = orig;
                    if (pat_up != base_pattern || pat_down != base_pattern) continue;
                    const double fd = (up - down) / (2.0 * step);
                    result.max_rel_error =
                        std::max(result.max_rel_error, rel_err((*grads[t])[i], fd));
                    ++result.params_checked;
                    result.index_checked[flat] = 1;
                    if (step != h) ++result.params_reduced_step;
                    checked = true;
                    break;
                }
                if (!checked) ++result.params_skipped;
            }
        }
        ++result.instances;
    }
    return result;
}

// MSE on the weak head against a fixed random target
inline GradCheckResult gradcheck_weak_mse(int instances, std::uint64_t seed, double h = 1e-3) {
    double target = 0.0;
    auto loss = [&target](const nnet::Weights& w, const Volume3D& image, std::uint64_t* pattern) {
        nnet::BodyCache cache;
        const nnet::WeakForward fwd = nnet::forward_weak(w, image, cache);
        if (pattern) *pattern = activation_pattern(cache);
        return (fwd.y_hat - target) * (fwd.y_hat - target);
    };
    auto grad = [&target](const nnet::Weights& w, const Volume3D& image, Rng& rng) {
        target = rng.normal(0.0, 0.5);
        nnet::BodyCache cache;
        const nnet::WeakForward fwd = nnet::forward_weak(w, image, cache);
        nnet::Weights g = w.zeros_like();
        nnet::backward_weak(w, cache, fwd, 2.0 * (fwd.y_hat - target), g);
        return g;
    };
    return run_gradcheck(true, instances, seed, h, loss, grad);
}

inline GradCheckResult gradcheck_strong_dice(int instances, std::uint64_t seed, double h = 1e-3) {
    Mask3D target = Mask3D::zeros({8, 8, 8});
    auto loss = [&target](const nnet::Weights& w, const Volume3D& image, std::uint64_t* pattern) {
        nnet::BodyCache cache;
        const DTensor prob = nnet::forward_strong(w, image, cache);
        if (pattern) *pattern = activation_pattern(cache);
        return train::soft_dice_loss(prob, target);
    };
    auto grad = [&target](const nnet::Weights& w, const Volume3D& image, Rng& rng) {
        for (auto& v : target.data) v = rng.bernoulli(0.2) ? 1 : 0;
        nnet::BodyCache cache;
        const DTensor prob = nnet::forward_strong(w, image, cache);
        train::DiceAccumulator acc;
        acc.add(prob, target);
        DTensor d_prob = DTensor::zeros(1, prob.dims);
        for (std::size_t i = 0; i < d_prob.v.size(); ++i)
            d_prob.v[i] = acc.grad(target.data[i]);
        nnet::Weights g = w.zeros_like();
        nnet::backward_strong(w, cache, prob, d_prob, g);
        return g;
    };
    return run_gradcheck(false, instances, seed, h, loss, grad);
}

} // namespace wmhlab::testutil
