#include "wmhlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wmhlab::metrics {

void RatingsMatrix::validate() const {
    if (n < 2 || k < 2) throw ConfigError("RatingsMatrix: need n >= 2 subjects and k >= 2 raters");
    if (values.size() != static_cast<std::size_t>(n) * k)
        throw ConfigError("RatingsMatrix: values size != n*k");
    for (double v : values)
        if (!std::isfinite(v)) throw ConfigError("RatingsMatrix: non-finite entry");
}

double dice(const Mask3D& a, const Mask3D& b) {
    require_same_grid(a.dims, a.spacing, b.dims, b.spacing);
    std::int64_t na = 0, nb = 0, nab = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        na += a.data[i];
        nb += b.data[i];
        nab += static_cast<std::int64_t>(a.data[i]) & b.data[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(nab) / static_cast<double>(na + nb);
}

std::optional<double> icc_2_1(const RatingsMatrix& m) {
    m.validate();
    const int n = m.n, k = m.k;
    double grand = 0.0;
    for (double v : m.values) grand += v;
    grand /= static_cast<double>(n) * k;

    std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            row_mean[i] += m.at(i, j);
            col_mean[j] += m.at(i, j);
        }
        row_mean[i] /= k;
    }
    for (int j = 0; j < k; ++j) col_mean[j] /= n;

    double ss_total = 0.0, ss_rows = 0.0, ss_cols = 0.0, ss_err = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            const double v = m.at(i, j);
            ss_total += (v - grand) * (v - grand);
            const double resid = v - row_mean[i] - col_mean[j] + grand;
            ss_err += resid * resid;
        }
    for (int i = 0; i < n; ++i) ss_rows += (row_mean[i] - grand) * (row_mean[i] - grand);
    ss_rows *= k;
    for (int j = 0; j < k; ++j) ss_cols += (col_mean[j] - grand) * (col_mean[j] - grand);
    ss_cols *= n;

    if (ss_total <= 0.0) return std::nullopt;

    const double msr = ss_rows / (n - 1);
    const double msc = ss_cols / (k - 1);
    const double mse = ss_err / (static_cast<double>(n - 1) * (k - 1));
    const double denom = msr + (k - 1) * mse + (static_cast<double>(k) / n) * (msc - mse);
    if (denom == 0.0) return std::nullopt;
    return (msr - mse) / denom;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw ConfigError("pearson: need two equal-length series, n >= 2");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("spearman: need two equal-length series, n >= 2");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    return pearson(rx, ry);
}

double r_squared(std::span<const double> y, std::span<const double> y_fit) {
    const std::size_t n = y.size();
    if (n != y_fit.size() || n < 2) throw ConfigError("r_squared: need two equal-length series, n >= 2");
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ss_res += (y[i] - y_fit[i]) * (y[i] - y_fit[i]);
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    if (ss_tot <= 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

} // namespace wmhlab::metrics
