#pragma once

#include "wmhlab/volume.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wmhlab::metrics {

// n subjects x k raters of real-valued measurements (n >= 2, k >= 2, finite)
struct RatingsMatrix {
    int n = 0, k = 0;
    std::vector<double> values; // row-major

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * k + j]; }
    void validate() const; // throws ConfigError
};

// 2|a∩b| / (|a|+|b|); both masks empty -> 1.0
double dice(const Mask3D& a, const Mask3D& b);

// Intraclass correlation, two-way random effects, absolute agreement, single
// measurement: (MSR - MSE) / (MSR + (k-1) MSE + (k/n)(MSC - MSE)).
// Returns nullopt when the matrix has zero total variance.
std::optional<double> icc_2_1(const RatingsMatrix& m);

double pearson(std::span<const double> x, std::span<const double> y);
// average ranks for ties
double spearman(std::span<const double> x, std::span<const double> y);
// 1 - SS_res/SS_tot
double r_squared(std::span<const double> y, std::span<const double> y_fit);

struct ScanDice {
    std::string scan_id;
    double dice = 0.0;
};

struct MetricsReport {
    std::optional<double> icc_2_1;
    double dice_mean = 0.0; // unweighted mean over scans with a defined Dice
    std::vector<ScanDice> dice_per_scan;
    double pearson = 0.0;
    double spearman = 0.0;
    double r_squared = 0.0;
    std::string dataset_tag;
    std::string checkpoint_id;
    std::uint64_t seed = 0;
};

} // namespace wmhlab::metrics
