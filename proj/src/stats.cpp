#include "wmhlab/stats.hpp"

#include "wmhlab/errors.hpp"
#include "wmhlab/metrics.hpp"

#include <cmath>
#include <limits>

namespace wmhlab::stats {

namespace {

// continued fraction for I_x(a,b), modified Lentz
double betacf(double a, double b, double x) {
    constexpr int max_iter = 500;
    constexpr double eps = 1e-15;
    constexpr double tiny = 1e-300;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace

double ibeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("ibeta: a, b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    // use the symmetry that keeps the continued fraction well-conditioned
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (df <= 0.0) throw ConfigError("student_t_two_sided_p: df must be positive");
    if (!std::isfinite(t)) return 0.0;
    const double x = df / (df + t * t);
    return ibeta(0.5 * df, 0.5, x);
}

RegressionResult ols_fit(const std::vector<std::vector<double>>& X, std::span<const double> y) {
    const int n = static_cast<int>(X.size());
    if (n == 0) throw ConfigError("ols_fit: empty design");
    const int p = static_cast<int>(X[0].size());
    if (static_cast<int>(y.size()) != n) throw ConfigError("ols_fit: y length != design rows");
    for (const auto& row : X)
        if (static_cast<int>(row.size()) != p) throw ConfigError("ols_fit: ragged design matrix");
    if (n <= p) throw ConfigError("ols_fit: need n > p");

    // Householder QR of the n x p design, applied to y as it goes
    std::vector<double> a(static_cast<std::size_t>(n) * p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) a[static_cast<std::size_t>(i) * p + j] = X[i][j];
    std::vector<double> qty(y.begin(), y.end());

    auto aref = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * p + j]; };

    double max_diag = 0.0;
    std::vector<double> v(n);
    for (int j = 0; j < p; ++j) {
        double norm = 0.0;
        for (int i = j; i < n; ++i) norm += aref(i, j) * aref(i, j);
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ConfigError("ols_fit: rank-deficient design (zero column)");
        const double alpha = aref(j, j) >= 0.0 ? -norm : norm;
        double vnorm2 = 0.0;
        for (int i = j; i < n; ++i) {
            v[i] = aref(i, j);
            if (i == j) v[i] -= alpha;
            vnorm2 += v[i] * v[i];
        }
        if (vnorm2 > 0.0) {
            for (int col = j; col < p; ++col) {
                double dot = 0.0;
                for (int i = j; i < n; ++i) dot += v[i] * aref(i, col);
                const double f = 2.0 * dot / vnorm2;
                for (int i = j; i < n; ++i) aref(i, col) -= f * v[i];
            }
            double dot = 0.0;
            for (int i = j; i < n; ++i) dot += v[i] * qty[i];
            const double f = 2.0 * dot / vnorm2;
            for (int i = j; i < n; ++i) qty[i] -= f * v[i];
        }
        max_diag = std::max(max_diag, std::fabs(aref(j, j)));
    }
    for (int j = 0; j < p; ++j)
        if (std::fabs(aref(j, j)) < 1e-12 * std::max(1.0, max_diag))
            throw ConfigError("ols_fit: rank-deficient design");

    RegressionResult res;
    res.n = n;
    res.df = n - p;
    res.beta.assign(p, 0.0);
    for (int j = p - 1; j >= 0; --j) {
        double s = qty[j];
        for (int col = j + 1; col < p; ++col) s -= aref(j, col) * res.beta[col];
        res.beta[j] = s / aref(j, j);
    }

    // residual sum of squares = ||tail of Q'y||^2
    double ss_res = 0.0;
    for (int i = p; i < n; ++i) ss_res += qty[i] * qty[i];

    double mean_y = 0.0;
    for (double yi : y) mean_y += yi;
    mean_y /= n;
    double ss_tot = 0.0;
    for (double yi : y) ss_tot += (yi - mean_y) * (yi - mean_y);
    res.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

    // (X'X)^-1 = R^-1 R^-T from the upper-triangular factor
    std::vector<double> rinv(static_cast<std::size_t>(p) * p, 0.0);
    auto rinvref = [&](int i, int j) -> double& { return rinv[static_cast<std::size_t>(i) * p + j]; };
    for (int col = 0; col < p; ++col) {
        rinvref(col, col) = 1.0 / aref(col, col);
        for (int i = col - 1; i >= 0; --i) {
            double s = 0.0;
            for (int j2 = i + 1; j2 <= col; ++j2) s += aref(i, j2) * rinvref(j2, col);
            rinvref(i, col) = -s / aref(i, i);
        }
    }
    const double sigma2 = ss_res / res.df;
    res.se.assign(p, 0.0);
    res.t.assign(p, 0.0);
    res.p.assign(p, 0.0);
    for (int j = 0; j < p; ++j) {
        double diag = 0.0;
        for (int col = j; col < p; ++col) diag += rinvref(j, col) * rinvref(j, col);
        res.se[j] = std::sqrt(sigma2 * diag);
        if (res.se[j] > 0.0) {
            res.t[j] = res.beta[j] / res.se[j];
            res.p[j] = student_t_two_sided_p(res.t[j], res.df);
        } else {
            res.t[j] = res.beta[j] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            res.p[j] = res.beta[j] == 0.0 ? 1.0 : 0.0;
        }
    }
    return res;
}

ConfounderReport confounder_analysis(std::span<const double> pred, std::span<const double> truth,
                                     const ConfounderVectors& confounders) {
    const std::size_t n = pred.size();
    if (truth.size() != n || confounders.ventricle.size() != n ||
        confounders.white_matter.size() != n || confounders.csf.size() != n)
        throw ConfigError("confounder_analysis: length mismatch");

    std::vector<std::vector<double>> xa(n), xb(n);
    for (std::size_t i = 0; i < n; ++i) {
        xa[i] = {1.0, truth[i]};
        xb[i] = {1.0, truth[i], confounders.ventricle[i], confounders.white_matter[i],
                 confounders.csf[i]};
    }
    ConfounderReport rep;
    rep.model_truth_only = ols_fit(xa, pred);
    rep.model_with_confounders = ols_fit(xb, pred);
    rep.delta_r_squared = rep.model_with_confounders.r_squared - rep.model_truth_only.r_squared;
    rep.truth_p_only = rep.model_truth_only.p[1];
    rep.truth_p_adjusted = rep.model_with_confounders.p[1];
    rep.corr_truth_ventricle = metrics::pearson(truth, confounders.ventricle);
    rep.corr_truth_white_matter = metrics::pearson(truth, confounders.white_matter);
    rep.corr_truth_csf = metrics::pearson(truth, confounders.csf);
    return rep;
}

} // namespace wmhlab::stats
