#pragma once

#include <span>
#include <string>
#include <vector>

namespace wmhlab::stats {

struct RegressionResult {
    std::vector<double> beta;        // includes the intercept (column 0 of the design)
    std::vector<double> se;
    std::vector<double> t;
    std::vector<double> p;           // two-sided
    double r_squared = 0.0;
    int n = 0;
    int df = 0;                      // n - #coefficients
};

// Ordinary least squares on a design matrix whose first column is the
// intercept. Solved by Householder QR (not normal equations); standard errors
// from the diagonal of sigma^2 (X'X)^-1; p-values from the two-sided
// Student-t CDF via the regularized incomplete beta function.
// Throws StatsError (n <= p, rank-deficient X, size mismatch).
RegressionResult ols_fit(const std::vector<std::vector<double>>& X, std::span<const double> y);

// regularized incomplete beta I_x(a,b), continued fraction (Lentz), abs err <= 1e-10
double ibeta(double a, double b, double x);

// two-sided p-value for a t statistic with df degrees of freedom
double student_t_two_sided_p(double t, double df);

struct ConfounderVectors {
    std::vector<double> ventricle, white_matter, csf;
};

struct ConfounderReport {
    RegressionResult model_truth_only;       // pred ~ 1 + truth
    RegressionResult model_with_confounders; // pred ~ 1 + truth + ventricle + wm + csf
    double delta_r_squared = 0.0;
    double truth_p_only = 1.0;
    double truth_p_adjusted = 1.0;
    double corr_truth_ventricle = 0.0;
    double corr_truth_white_matter = 0.0;
    double corr_truth_csf = 0.0;
};

// Fits pred ~ truth with and without the confounder volumes and reports both
// coefficients of determination, the truth coefficient's p-values, and the
// pairwise correlations between truth and each confounder.
ConfounderReport confounder_analysis(std::span<const double> pred, std::span<const double> truth,
                                     const ConfounderVectors& confounders);

} // namespace wmhlab::stats
