#pragma once

#include <map>
#include <string>
#include <vector>

#include "clarify/core.hpp"

// Significance testing and correlation analysis. Pure functions, fully
// concurrent.

namespace clarify::stats {

/// Two aligned measurement vectors, e.g. per-query scores of two schemes.
struct PairedSample {
    std::vector<std::string> labels;
    std::vector<double> a;
    std::vector<double> b;

    /// Throws unless lengths match, are >= 2 and labels align.
    void validate() const;
};

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
    bool degenerate = false;  // zero difference variance; t undefined
};

/// Paired Student t-test on d_i = a_i - b_i with sample sd (n-1 denominator).
/// Two-sided p. Zero difference variance is flagged, never silently 0.
TTestResult paired_t_test(const PairedSample& sample);

/// Unpaired Welch variant, available behind the harness `--unpaired` flag.
TTestResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b);

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;
    int n = 0;
    bool degenerate = false;  // zero variance in x or y
};

/// Pearson correlation with two-sided p from t = r*sqrt((n-2)/(1-r^2)),
/// df = n-2. |r| = 1 yields p = 0.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Two-sided p-value for a correlation coefficient at sample size n.
double pearson_p_from_r(double r, int n);

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation, ~1e-9 relative accuracy.
double regularized_incomplete_beta(double a, double b, double x);

/// CDF of the Student t distribution with df degrees of freedom.
double student_t_cdf(double t, int df);

/// Two-sided p-value for a t statistic.
double student_t_two_sided_p(double t, int df);

double mean(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

/// Baseline schemes and the marker each contributes when beaten at p < alpha.
/// standard -> '*', AT-standard -> '†' (dagger), CoT -> 'Δ' (delta).
std::string marker_for_baseline(PromptScheme baseline);

/// Per-query scores for the four schemes, aligned by label. For every scheme,
/// attaches the baseline's marker iff mean improvement over that baseline is
/// > 0 and the paired t-test p < alpha. With `unpaired`, Welch's test is used
/// instead.
std::map<PromptScheme, std::string> significance_markers(
    const std::map<PromptScheme, std::map<std::string, double>>& per_query,
    double alpha = 0.01, bool unpaired = false);

}  // namespace clarify::stats
